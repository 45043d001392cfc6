// Fixture-driven tests: rendered numbers must equal the recorded API
// payloads exactly, and action buttons must mirror the legal transitions.

import { readFileSync } from 'node:fs'
import { dirname, join } from 'node:path'
import { fileURLToPath } from 'node:url'
import { describe, expect, it } from 'vitest'

import type { BatchDetail, BatchState, BatchSummary, CorpusStats, Distribution, Envelope } from '../src/model.js'
import { DISTRIBUTION_DIMS } from '../src/model.js'
import { enabledActions, TRANSITIONS } from '../src/transitions.js'
import {
    badgeFor,
    distributionBars,
    formatBytes,
    isValidDimension,
    toBatchViewModel,
} from '../src/viewmodel.js'
import {
    renderBoard,
    renderDetail,
    renderEmptyDistribution,
    renderInvalidDimension,
    renderStatsCards,
} from '../src/render.js'
import { barChartSvg } from '../src/chart.js'

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), 'fixtures')

function fixture<T>(name: string): T {
    return JSON.parse(readFileSync(join(FIXTURES, name), 'utf-8')) as T
}

const batches = fixture<Envelope<BatchSummary[]>>('batches.json').data!
const detailClean = fixture<Envelope<BatchDetail>>('batch_detail_clean.json').data!
const detailRejected = fixture<Envelope<BatchDetail>>('batch_detail_rejected.json').data!
const distribution = fixture<Envelope<Distribution>>('distribution_modality.json').data!
const corpusStats = fixture<CorpusStats>('corpus_stats.json')

describe('batch view models from recorded fixtures', () => {
    it('mirrors every count and state exactly', () => {
        for (const summary of batches) {
            const vm = toBatchViewModel(summary)
            expect(vm.batchId).toBe(summary.batch_id)
            expect(vm.state).toBe(summary.state)
            expect(vm.files).toBe(summary.counts.files)
            expect(vm.studies).toBe(summary.counts.studies)
            expect(vm.corrupt).toBe(summary.counts.corrupt)
            expect(vm.legacy).toBe(summary.counts.legacy)
            expect(vm.modern).toBe(summary.counts.modern)
        }
    })

    it('derives the three distinct badges from the fixture states', () => {
        const byId = new Map(batches.map((b) => [b.batch_id, toBatchViewModel(b)]))
        expect(byId.get('B-clean')!.badge).toBe('clean')
        expect(byId.get('B-nomanifest')!.badge).toBe('unverified')
        expect(byId.get('B-dropped')!.badge).toBe('rejected')
    })

    it('renders rows carrying the exact fixture counts', () => {
        const html = renderBoard(batches.map(toBatchViewModel))
        for (const summary of batches) {
            expect(html).toContain(summary.batch_id)
            expect(html).toContain(`<td class="num">${summary.counts.files}</td>`)
        }
    })
})

describe('action buttons mirror the legal transition set', () => {
    const cases: [BatchState, boolean, boolean, boolean][] = [
        ['VERIFIED', true, true, false],
        ['UNVERIFIED', true, true, false],
        ['REJECTED', false, false, true],
        ['CONFIRMED', false, false, false],
        ['RECEIVED', false, false, false],
        ['RECONCILED', false, true, false],
        ['SCANNED', false, false, false],
    ]
    it.each(cases)('%s -> confirm=%s reject=%s retransfer=%s', (state, confirm, reject, retransfer) => {
        expect(enabledActions(state)).toEqual({ confirm, reject, retransfer })
    })

    it('enabled-set equals reachability in the transition table', () => {
        for (const state of Object.keys(TRANSITIONS) as BatchState[]) {
            const actions = enabledActions(state)
            expect(actions.confirm).toBe(TRANSITIONS[state].includes('CONFIRMED'))
            expect(actions.reject).toBe(TRANSITIONS[state].includes('REJECTED'))
        }
    })

    it('disables buttons in rendered rows exactly when illegal', () => {
        const html = renderBoard(batches.map(toBatchViewModel))
        const rows = html.split('<tr class="batch-row"').slice(1)
        for (const summary of batches) {
            const row = rows.find((r) => r.includes(summary.batch_id))!
            const actions = enabledActions(summary.state)
            expect(row.includes('data-action="confirm" data-batch="' + summary.batch_id + '" disabled')).toBe(!actions.confirm)
            expect(row.includes('data-action="retransfer" data-batch="' + summary.batch_id + '" disabled')).toBe(!actions.retransfer)
        }
    })
})

describe('detail rendering', () => {
    it('clean batch shows no findings', () => {
        const html = renderDetail(detailClean)
        expect(html).toContain('No findings: batch is clean.')
    })

    it('rejected batch surfaces the rejection reason and the missing path', () => {
        const html = renderDetail(detailRejected)
        expect(html).toContain(detailRejected.record.rejection_reason!)
        for (const path of detailRejected.reconciliation!.missing_files) {
            expect(html).toContain(path)
        }
    })
})

describe('distribution explorer', () => {
    it('bar data equals the recorded payload exactly', () => {
        const bars = distributionBars(distribution)
        const total = Object.values(distribution.counts).reduce((a, b) => a + b, 0)
        expect(bars.reduce((a, b) => a + b.count, 0)).toBe(total)
        for (const [label, count] of Object.entries(distribution.counts)) {
            expect(bars.find((b) => b.label === label)?.count).toBe(count)
        }
    })

    it('chart svg carries the exact counts', () => {
        const bars = distributionBars(distribution)
        const svg = barChartSvg(bars)
        for (const bar of bars) {
            expect(svg).toContain(`data-label="${bar.label}" data-count="${bar.count}"`)
        }
    })

    it('unknown dimension is blocked client-side with the valid list', () => {
        expect(isValidDimension('modality')).toBe(true)
        expect(isValidDimension('color')).toBe(false)
        const html = renderInvalidDimension(DISTRIBUTION_DIMS)
        for (const dim of DISTRIBUTION_DIMS) expect(html).toContain(dim)
    })

    it('empty corpus renders the explicit empty state', () => {
        expect(renderEmptyDistribution()).toContain('empty')
    })
})

describe('corpus stat cards', () => {
    it('cards show server-derived totals verbatim', () => {
        const html = renderStatsCards(corpusStats)
        expect(html).toContain(String(corpusStats.catalog_entries))
        const batchesTotal = Object.values(corpusStats.batch_states).reduce((a, b) => a + b, 0)
        expect(html).toContain(String(batchesTotal))
    })
})

describe('byte formatting', () => {
    it('keeps small numbers exact and scales larger ones', () => {
        expect(formatBytes(null)).toBe('-')
        expect(formatBytes(512)).toBe('512 B')
        expect(formatBytes(2048)).toBe('2.0 KiB')
    })

    it('badge mapping covers processing states', () => {
        expect(badgeFor('HASHED')).toBe('processing')
    })
})
