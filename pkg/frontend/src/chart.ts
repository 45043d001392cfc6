// Dependency-free SVG bar chart.  Pure string builder so tests can assert
// on the rendered counts directly.

import type { BarDatum } from './viewmodel.js'

export interface ChartOptions {
    width?: number
    barHeight?: number
    gap?: number
    labelWidth?: number
}

function escapeXml(s: string): string {
    return s
        .replace(/&/g, '&amp;')
        .replace(/</g, '&lt;')
        .replace(/>/g, '&gt;')
        .replace(/"/g, '&quot;')
}

export function barChartSvg(bars: BarDatum[], options: ChartOptions = {}): string {
    const width = options.width ?? 640
    const barHeight = options.barHeight ?? 24
    const gap = options.gap ?? 8
    const labelWidth = options.labelWidth ?? 150
    const max = Math.max(...bars.map((b) => b.count), 1)
    const innerWidth = width - labelWidth - 70
    const height = bars.length * (barHeight + gap) + gap

    const rows = bars.map((bar, i) => {
        const y = gap + i * (barHeight + gap)
        const w = Math.max(1, Math.round((bar.count / max) * innerWidth))
        return [
            `<text x="${labelWidth - 8}" y="${y + barHeight / 2}" text-anchor="end" dominant-baseline="central" class="bar-label">${escapeXml(bar.label)}</text>`,
            `<rect x="${labelWidth}" y="${y}" width="${w}" height="${barHeight}" rx="3" class="bar" data-label="${escapeXml(bar.label)}" data-count="${bar.count}"></rect>`,
            `<text x="${labelWidth + w + 6}" y="${y + barHeight / 2}" dominant-baseline="central" class="bar-count">${bar.count}</text>`,
        ].join('')
    })
    return `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}" role="img">${rows.join('')}</svg>`
}
