// HTML string builders for the board and the detail pane.  Pure functions
// of API-derived view models, so snapshot tests compare rendered counts to
// recorded fixtures without a browser.

import type { BatchDetail, CorpusStats } from './model.js'
import type { BatchViewModel, FindingRow } from './viewmodel.js'
import { detailFindings } from './viewmodel.js'

function esc(s: string): string {
    return s
        .replace(/&/g, '&amp;')
        .replace(/</g, '&lt;')
        .replace(/>/g, '&gt;')
        .replace(/"/g, '&quot;')
}

function button(action: string, batchId: string, label: string, enabled: boolean): string {
    const disabled = enabled ? '' : ' disabled'
    return `<button class="action ${action}" data-action="${action}" data-batch="${esc(batchId)}"${disabled}>${label}</button>`
}

export function renderBatchRow(vm: BatchViewModel): string {
    return [
        `<tr class="batch-row" data-batch="${esc(vm.batchId)}">`,
        `<td class="mono">${esc(vm.batchId)}</td>`,
        `<td><span class="badge badge-${vm.badge}">${vm.state}</span></td>`,
        `<td class="num">${vm.files}</td>`,
        `<td class="num">${vm.studies}</td>`,
        `<td class="num">${vm.modern}/${vm.legacy}/${vm.corrupt}</td>`,
        `<td class="num">${vm.bytesLabel}</td>`,
        `<td>${button('confirm', vm.batchId, 'Confirm', vm.actions.confirm)}` +
        `${button('reject', vm.batchId, 'Reject', vm.actions.reject)}` +
        `${button('retransfer', vm.batchId, 'Re-request', vm.actions.retransfer)}</td>`,
        `</tr>`,
    ].join('')
}

export function renderBoard(viewModels: BatchViewModel[]): string {
    if (viewModels.length === 0) {
        return `<p class="empty">No batches received yet.</p>`
    }
    const rows = viewModels.map(renderBatchRow).join('')
    return [
        `<table class="board">`,
        `<thead><tr><th>Batch</th><th>State</th><th>Files</th><th>Studies</th>`,
        `<th>modern/legacy/corrupt</th><th>Size</th><th>Actions</th></tr></thead>`,
        `<tbody>${rows}</tbody></table>`,
    ].join('')
}

function findingRows(findings: FindingRow[]): string {
    if (findings.length === 0) {
        return `<p class="empty">No findings: batch is clean.</p>`
    }
    const rows = findings
        .map((f) => `<tr><td>${esc(f.kind)}</td><td class="mono">${esc(f.path)}</td><td>${esc(f.detail)}</td></tr>`)
        .join('')
    return `<table class="findings"><thead><tr><th>Kind</th><th>Path</th><th>Detail</th></tr></thead><tbody>${rows}</tbody></table>`
}

export function renderDetail(detail: BatchDetail): string {
    const record = detail.record
    const recon = detail.reconciliation
    const parts = [
        `<h2>Batch ${esc(record.batch_id)} <span class="badge">${record.state}</span></h2>`,
        `<dl class="kv">`,
        `<dt>Received</dt><dd>${esc(record.received_at)}</dd>`,
        `<dt>Manifest</dt><dd>${recon ? (recon.manifest_present ? 'present' : 'absent (unverified batch)') : '-'}</dd>`,
        record.rejection_reason ? `<dt>Rejection</dt><dd>${esc(record.rejection_reason)}</dd>` : '',
        record.retransfer_requested ? `<dt>Re-request</dt><dd>sent to clinical side</dd>` : '',
        `</dl>`,
        `<h3>Findings</h3>`,
        findingRows(detailFindings(detail)),
    ]
    if (recon && !recon.clean) {
        const lists: [string, string[]][] = [
            ['Missing', recon.missing_files],
            ['Unexpected', recon.unexpected_files],
            ['Digest mismatch', recon.digest_mismatches],
            ['Duplicate SOP UIDs', recon.duplicate_sop_uids],
            ['Duplicate accessions', recon.duplicate_accessions],
            ['Accession format', recon.accession_format_violations],
        ]
        const items = lists
            .filter(([, values]) => values.length > 0)
            .map(([label, values]) => `<li><strong>${label}:</strong> ${values.map(esc).join(', ')}</li>`)
            .join('')
        if (items) parts.push(`<h3>Reconciliation</h3><ul class="recon">${items}</ul>`)
    }
    return parts.join('')
}

export function renderStatsCards(stats: CorpusStats): string {
    const batches = Object.values(stats.batch_states).reduce((a, b) => a + b, 0)
    const bytes = Object.values(stats.bytes_per_batch).reduce((a, b) => a + b, 0)
    const cards: [string, string][] = [
        ['Catalog entries', String(stats.catalog_entries)],
        ['Batches', String(batches)],
        ['Bytes cataloged', String(bytes)],
        ['Studies', String(Object.values(stats.files_per_study).reduce((a, b) => a + b, 0))],
    ]
    return cards
        .map(([label, value]) => `<div class="card"><div class="card-value">${value}</div><div class="card-label">${label}</div></div>`)
        .join('')
}

export function renderEmptyDistribution(): string {
    return `<p class="empty">Corpus is empty: nothing to chart yet.</p>`
}

export function renderInvalidDimension(validDims: readonly string[]): string {
    return `<p class="empty">Unknown dimension. Valid dimensions: ${validDims.join(', ')}.</p>`
}
