// Derived presentation state.  Every number shown comes from the latest
// API payload; nothing is computed ahead of the server.

import type { BatchDetail, BatchSummary, Distribution } from './model.js'
import { DISTRIBUTION_DIMS } from './model.js'
import { enabledActions, type EnabledActions } from './transitions.js'

export type Badge = 'clean' | 'unverified' | 'rejected' | 'confirmed' | 'processing'

export interface BatchViewModel {
    batchId: string
    state: string
    badge: Badge
    files: number
    studies: number
    corrupt: number
    legacy: number
    modern: number
    bytesLabel: string
    receivedAt: string
    rejectionReason: string | null
    retransferRequested: boolean
    actions: EnabledActions
}

export function badgeFor(state: BatchSummary['state']): Badge {
    switch (state) {
        case 'VERIFIED': return 'clean'
        case 'UNVERIFIED': return 'unverified'
        case 'REJECTED': return 'rejected'
        case 'CONFIRMED': return 'confirmed'
        default: return 'processing'
    }
}

export function formatBytes(n: number | null): string {
    if (n === null) return '-'
    if (n < 1024) return `${n} B`
    const units = ['KiB', 'MiB', 'GiB', 'TiB']
    let value = n
    let unit = 'B'
    for (const u of units) {
        if (value < 1024) break
        value /= 1024
        unit = u
    }
    return `${value.toFixed(1)} ${unit}`
}

export function toBatchViewModel(summary: BatchSummary): BatchViewModel {
    return {
        batchId: summary.batch_id,
        state: summary.state,
        badge: badgeFor(summary.state),
        files: summary.counts.files,
        studies: summary.counts.studies,
        corrupt: summary.counts.corrupt,
        legacy: summary.counts.legacy,
        modern: summary.counts.modern,
        bytesLabel: formatBytes(summary.bytes_total),
        receivedAt: summary.received_at,
        rejectionReason: summary.rejection_reason,
        retransferRequested: summary.retransfer_requested,
        actions: enabledActions(summary.state),
    }
}

export interface FindingRow {
    kind: string
    path: string
    detail: string
}

export function detailFindings(detail: BatchDetail): FindingRow[] {
    return (detail.quality?.error_list ?? []).map((f) => ({
        kind: f.kind,
        path: f.path,
        detail: f.detail,
    }))
}

export interface BarDatum {
    label: string
    count: number
}

export function distributionBars(distribution: Distribution): BarDatum[] {
    return Object.entries(distribution.counts)
        .map(([label, count]) => ({ label: label === '' ? '(none)' : label, count }))
        .sort((a, b) => b.count - a.count || a.label.localeCompare(b.label))
}

export function isValidDimension(dim: string): boolean {
    return (DISTRIBUTION_DIMS as readonly string[]).includes(dim)
}
