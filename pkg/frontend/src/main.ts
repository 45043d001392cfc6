// Dashboard entry point: poll the API, render, wire operator actions.
// All state lives on the server; every render reflects the latest poll.

import { ApiClient, ApiError } from './api.js'
import { DISTRIBUTION_DIMS } from './model.js'
import {
    renderBoard,
    renderDetail,
    renderEmptyDistribution,
    renderInvalidDimension,
    renderStatsCards,
} from './render.js'
import { barChartSvg } from './chart.js'
import { distributionBars, isValidDimension, toBatchViewModel } from './viewmodel.js'

const POLL_INTERVAL_MS = 2000

const api = new ApiClient()
let selectedBatch: string | null = null
let selectedDim: string = DISTRIBUTION_DIMS[0]

function el(id: string): HTMLElement {
    const node = document.getElementById(id)
    if (!node) throw new Error(`missing element #${id}`)
    return node
}

async function refreshBoard(): Promise<void> {
    const summaries = await api.listBatches()
    el('board').innerHTML = renderBoard(summaries.map(toBatchViewModel))
}

async function refreshStats(): Promise<void> {
    const stats = await api.corpusStats()
    el('stats').innerHTML = renderStatsCards(stats)
}

async function refreshDistribution(): Promise<void> {
    if (!isValidDimension(selectedDim)) {
        // Client blocks the request outright for unknown dimensions.
        el('chart').innerHTML = renderInvalidDimension(DISTRIBUTION_DIMS)
        return
    }
    const distribution = await api.distribution(selectedDim)
    const bars = distributionBars(distribution)
    el('chart').innerHTML = bars.length === 0 ? renderEmptyDistribution() : barChartSvg(bars)
}

async function refreshDetail(): Promise<void> {
    if (!selectedBatch) return
    const detail = await api.batchDetail(selectedBatch)
    el('detail').innerHTML = renderDetail(detail)
}

async function refreshAll(): Promise<void> {
    try {
        await Promise.all([refreshBoard(), refreshStats(), refreshDistribution(), refreshDetail()])
        el('status').textContent = `live - refreshed ${new Date().toLocaleTimeString()}`
    } catch (error) {
        el('status').textContent = `API unreachable: ${String(error)}`
    }
}

async function runAction(action: string, batchId: string): Promise<void> {
    try {
        if (action === 'confirm') {
            await api.confirm(batchId)
        } else if (action === 'reject') {
            const reason = window.prompt('Rejection reason (sent to the clinical team):')
            if (!reason) return
            await api.reject(batchId, reason)
        } else if (action === 'retransfer') {
            await api.requestRetransfer(batchId)
        }
    } catch (error) {
        if (error instanceof ApiError) {
            // Surface the server's refusal verbatim; no optimistic state change.
            window.alert(`${error.code}: ${error.message}`)
        } else {
            throw error
        }
    }
    await refreshAll()
}

function wireEvents(): void {
    el('board').addEventListener('click', (event) => {
        const target = event.target as HTMLElement
        const actionButton = target.closest('button.action') as HTMLButtonElement | null
        if (actionButton && !actionButton.disabled) {
            void runAction(actionButton.dataset.action!, actionButton.dataset.batch!)
            return
        }
        const row = target.closest('tr.batch-row') as HTMLTableRowElement | null
        if (row) {
            selectedBatch = row.dataset.batch ?? null
            void refreshDetail()
        }
    })
    const select = el('dim-select') as HTMLSelectElement
    select.innerHTML = DISTRIBUTION_DIMS.map((d) => `<option value="${d}">${d}</option>`).join('')
    select.addEventListener('change', () => {
        selectedDim = select.value
        void refreshDistribution()
    })
}

wireEvents()
void refreshAll()
setInterval(() => void refreshAll(), POLL_INTERVAL_MS)
