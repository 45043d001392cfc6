// Wire types mirroring the /api/v1 contract.

export type BatchState =
    | 'RECEIVED' | 'HASHED' | 'RECONCILED' | 'SCANNED' | 'CATALOGED'
    | 'PROFILED' | 'VERIFIED' | 'UNVERIFIED' | 'REJECTED' | 'CONFIRMED'

export interface Envelope<T> {
    ok: boolean
    data: T | null
    error: { code: string; message: string } | null
}

export interface BatchCounts {
    files: number
    studies: number
    corrupt: number
    legacy: number
    modern: number
}

export interface BatchSummary {
    batch_id: string
    state: BatchState
    received_at: string
    counts: BatchCounts
    rejection_reason: string | null
    error_detail: string | null
    confirmed_at: string | null
    retransfer_requested: boolean
    bytes_total: number | null
}

export interface QualityFinding {
    path: string
    kind: string
    detail: string
}

export interface QualityReport {
    batch_id: string
    file_count: number
    study_count: number
    status_histogram: Record<string, number>
    error_list: QualityFinding[]
    bytes_total: number
    files_per_study: { min: number; max: number; mean: number }
    manifest_present: boolean
}

export interface ReconciliationReport {
    batch_id: string
    manifest_present: boolean
    missing_files: string[]
    unexpected_files: string[]
    digest_mismatches: string[]
    duplicate_sop_uids: string[]
    duplicate_accessions: string[]
    accession_format_violations: string[]
    study_count_deltas: Record<string, number[]>
    manifest_error: string | null
    clean: boolean
}

export interface BatchDetail {
    record: BatchSummary
    reconciliation: ReconciliationReport | null
    quality: QualityReport | null
    links: {
        linked: number
        orphan_images: string[]
        orphan_rows: string[]
        ambiguous: string[]
    } | null
    duplicates: {
        dup_files: string[]
        dup_studies: string[]
        cross_batch: [string, string][]
    } | null
}

export interface Distribution {
    dim: string
    counts: Record<string, number>
}

export interface CorpusStats {
    schema_version: number
    catalog_entries: number
    dimensions: Record<string, Record<string, number>>
    files_per_study: Record<string, number>
    bytes_per_batch: Record<string, number>
    batch_states: Record<string, number>
}

export const DISTRIBUTION_DIMS = ['modality', 'manufacturer', 'view_position'] as const
export type DistributionDim = (typeof DISTRIBUTION_DIMS)[number]
