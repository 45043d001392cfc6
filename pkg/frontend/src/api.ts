// Typed client for the /api/v1 contract.

import type {
    BatchDetail,
    BatchSummary,
    CorpusStats,
    Distribution,
    Envelope,
} from './model.js'

export class ApiError extends Error {
    constructor(
        public status: number,
        public code: string,
        message: string,
    ) {
        super(message)
    }
}

export class ApiClient {
    constructor(private base: string = '') {}

    private async unwrap<T>(response: Response): Promise<T> {
        const body = (await response.json()) as Envelope<T>
        if (!body.ok || body.data === null) {
            const error = body.error ?? { code: 'UNKNOWN', message: `HTTP ${response.status}` }
            throw new ApiError(response.status, error.code, error.message)
        }
        return body.data
    }

    async listBatches(): Promise<BatchSummary[]> {
        return this.unwrap(await fetch(`${this.base}/api/v1/batches`))
    }

    async batchDetail(batchId: string): Promise<BatchDetail> {
        return this.unwrap(await fetch(`${this.base}/api/v1/batches/${batchId}`))
    }

    async confirm(batchId: string): Promise<{ record: BatchSummary; staging_deleted: boolean }> {
        return this.unwrap(
            await fetch(`${this.base}/api/v1/batches/${batchId}/confirm`, { method: 'POST' }),
        )
    }

    async reject(batchId: string, reason: string): Promise<BatchSummary> {
        return this.unwrap(
            await fetch(`${this.base}/api/v1/batches/${batchId}/reject`, {
                method: 'POST',
                headers: { 'content-type': 'application/json' },
                body: JSON.stringify({ reason }),
            }),
        )
    }

    async requestRetransfer(batchId: string): Promise<BatchSummary> {
        return this.unwrap(
            await fetch(`${this.base}/api/v1/batches/${batchId}/request-retransfer`, {
                method: 'POST',
            }),
        )
    }

    // Served verbatim from the canonical on-disk report, no envelope.
    async corpusStats(): Promise<CorpusStats> {
        const response = await fetch(`${this.base}/api/v1/corpus/stats`)
        if (!response.ok) throw new ApiError(response.status, 'STATS_UNAVAILABLE', 'corpus stats unavailable')
        return (await response.json()) as CorpusStats
    }

    async distribution(dim: string): Promise<Distribution> {
        return this.unwrap(
            await fetch(`${this.base}/api/v1/corpus/distribution?dim=${encodeURIComponent(dim)}`),
        )
    }
}
