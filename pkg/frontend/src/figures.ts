/**
 * The six figure kinds rendered from export tables.
 *
 * trajectory    counterfactual/fit bands with outcome crosses
 * levels        the same on the level (e.g. original GDP) scale
 * coefficients  posterior coefficient trajectories with credible bands
 * monitor       sequential model-probability curve
 * heatmap       sparsity heatmap of a coefficient/loadings/scores matrix
 * factors       factor trajectories indexed by singular value
 *
 * Rendering is a pure function of the rows: every statistic is read off the
 * table (quantile lookup only, no aggregation happens here).
 */

import {
    ExportRow,
    Kind,
    SchemaError,
    labelsWithStat,
    statSeries,
    timeAxis,
} from './schema.js';
import { Canvas, PALETTE, extent, linearScale } from './svg.js';

export const FIGURE_KINDS = [
    'trajectory',
    'levels',
    'coefficients',
    'monitor',
    'heatmap',
    'factors',
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

const WIDTH = 640;
const HEIGHT = 360;

interface BandStats {
    readonly lo: string;
    readonly mid: string;
    readonly hi: string;
    readonly cross?: string;
}

function timeScale(times: readonly string[], canvas: Canvas) {
    const numeric = times.map(Number);
    const allNumeric = numeric.every((v) => Number.isFinite(v));
    const xsDomain: [number, number] = allNumeric
        ? [Math.min(...numeric), Math.max(...numeric)]
        : [0, times.length - 1];
    const xs = linearScale(xsDomain, [canvas.innerLeft, canvas.innerRight]);
    const pos = (t: string, i: number) => (allNumeric ? xs(Number(t)) : xs(i));
    return { xs, pos };
}

function renderBandFigure(
    rows: readonly ExportRow[],
    kind: Kind,
    series: string,
    stats: BandStats,
    title: string,
): string {
    const lo = statSeries(rows, kind, series, stats.lo);
    const mid = statSeries(rows, kind, series, stats.mid);
    const hi = statSeries(rows, kind, series, stats.hi);
    if (mid.size === 0) {
        throw new SchemaError(`no '${stats.mid}' rows for series '${series}'`);
    }
    const times = timeAxis(rows.filter((r) => r.kind === kind && r.label === series && r.stat === stats.mid));
    const crosses = stats.cross ? statSeries(rows, kind, series, stats.cross) : new Map<string, number>();

    const canvas = new Canvas(WIDTH, HEIGHT);
    const values: number[] = [];
    for (const t of times) {
        for (const m of [lo, mid, hi, crosses]) {
            const v = m.get(t);
            if (v !== undefined) values.push(v);
        }
    }
    const ys = linearScale(extent(values), [canvas.innerBottom, canvas.innerTop]);
    const { pos } = timeScale(times, canvas);

    const upper: Array<readonly [number, number]> = [];
    const lower: Array<readonly [number, number]> = [];
    const median: Array<readonly [number, number]> = [];
    times.forEach((t, i) => {
        const l = lo.get(t);
        const h = hi.get(t);
        const m = mid.get(t);
        const x = pos(t, i);
        if (l !== undefined && h !== undefined) {
            upper.push([x, ys(h)]);
            lower.push([x, ys(l)]);
        }
        if (m !== undefined) median.push([x, ys(m)]);
    });
    canvas.axes(linearScale(timeDomain(times), [canvas.innerLeft, canvas.innerRight]), ys);
    canvas.polygon([...upper, ...lower.reverse()], PALETTE[0], 0.22);
    canvas.polyline(median, PALETTE[0], 1.8);
    times.forEach((t, i) => {
        const v = crosses.get(t);
        if (v !== undefined) canvas.cross(pos(t, i), ys(v));
    });
    canvas.title(title);
    return canvas.render();
}

function timeDomain(times: readonly string[]): [number, number] {
    const numeric = times.map(Number);
    if (numeric.every((v) => Number.isFinite(v))) {
        return [Math.min(...numeric), Math.max(...numeric)];
    }
    return [0, times.length - 1];
}

/** Counterfactual/fit trajectory: median line, shaded 90% band, outcome crosses. */
export function renderTrajectory(rows: readonly ExportRow[], series: string): string {
    return renderBandFigure(
        rows,
        'counterfactual',
        series,
        { lo: 'q05', mid: 'q50', hi: 'q95', cross: 'outcome' },
        `counterfactual trajectory: ${series}`,
    );
}

/** Trajectory bands transformed to the level scale, with level-scale outcomes. */
export function renderLevels(rows: readonly ExportRow[], series: string): string {
    return renderBandFigure(
        rows,
        'counterfactual',
        series,
        { lo: 'level_q05', mid: 'level_q50', hi: 'level_q95', cross: 'level_outcome' },
        `counterfactual level: ${series}`,
    );
}

/** Posterior coefficient trajectories: one band panel per requested label. */
export function renderCoefficients(rows: readonly ExportRow[], labels: readonly string[]): string {
    if (labels.length === 0) {
        throw new SchemaError('coefficients figure needs at least one coefficient label');
    }
    const panelH = 200;
    const canvas = new Canvas(WIDTH, panelH * labels.length + 30, {
        top: 30,
        right: 16,
        bottom: 0,
        left: 52,
    });
    labels.forEach((label, p) => {
        const mean = statSeries(rows, 'posterior', label, 'mean');
        const lo = statSeries(rows, 'posterior', label, 'q05');
        const hi = statSeries(rows, 'posterior', label, 'q95');
        if (mean.size === 0) {
            throw new SchemaError(`no posterior rows for coefficient '${label}'`);
        }
        const times = timeAxis(rows.filter((r) => r.kind === 'posterior' && r.label === label && r.stat === 'mean'));
        const top = 30 + p * panelH + 12;
        const bottom = 30 + (p + 1) * panelH - 34;
        const values: number[] = [];
        for (const t of times) {
            for (const m of [mean, lo, hi]) {
                const v = m.get(t);
                if (v !== undefined) values.push(v);
            }
        }
        const ys = linearScale(extent(values), [bottom, top]);
        const xs = linearScale(timeDomain(times), [canvas.innerLeft, canvas.innerRight]);
        const numeric = times.map(Number);
        const allNumeric = numeric.every((v) => Number.isFinite(v));
        const pos = (t: string, i: number) => (allNumeric ? xs(Number(t)) : xs(i));

        const upper: Array<readonly [number, number]> = [];
        const lower: Array<readonly [number, number]> = [];
        const line: Array<readonly [number, number]> = [];
        times.forEach((t, i) => {
            const x = pos(t, i);
            const l = lo.get(t);
            const h = hi.get(t);
            const m = mean.get(t);
            if (l !== undefined && h !== undefined) {
                upper.push([x, ys(h)]);
                lower.push([x, ys(l)]);
            }
            if (m !== undefined) line.push([x, ys(m)]);
        });
        const colour = PALETTE[p % PALETTE.length];
        canvas.polygon([...upper, ...lower.reverse()], colour, 0.18);
        canvas.polyline(line, colour, 1.6);
        if (ys.domain[0] < 0 && ys.domain[1] > 0) {
            canvas.line(canvas.innerLeft, ys(0), canvas.innerRight, ys(0), '#999999', 0.8, '4 3');
        }
        canvas.line(canvas.innerLeft, bottom, canvas.innerRight, bottom, '#444444');
        canvas.line(canvas.innerLeft, top, canvas.innerLeft, bottom, '#444444');
        for (const tv of [ys.domain[0], (ys.domain[0] + ys.domain[1]) / 2, ys.domain[1]]) {
            canvas.text(canvas.innerLeft - 7, ys(tv) + 3.5, tv.toPrecision(3), { anchor: 'end', size: 9 });
        }
        times.forEach((t, i) => {
            if (times.length <= 12 || i % Math.ceil(times.length / 12) === 0) {
                canvas.text(pos(t, i), bottom + 14, t, { anchor: 'middle', size: 9 });
            }
        });
        canvas.text(canvas.innerLeft + 6, top + 11, label, { size: 11, fill: colour });
    });
    canvas.title('coefficient trajectories');
    return canvas.render();
}

/** Sequential model-probability curve with the 0.5 equal-odds guide. */
export function renderMonitor(rows: readonly ExportRow[]): string {
    const labels = labelsWithStat(rows, 'monitor', 'prob');
    if (labels.length === 0) {
        throw new SchemaError("no monitor rows with stat 'prob'");
    }
    const canvas = new Canvas(WIDTH, HEIGHT);
    const ys = linearScale([0, 1], [canvas.innerBottom, canvas.innerTop]);
    let xsOut = linearScale([0, 1], [canvas.innerLeft, canvas.innerRight]);
    labels.forEach((label, k) => {
        const prob = statSeries(rows, 'monitor', label, 'prob');
        const times = timeAxis(rows.filter((r) => r.kind === 'monitor' && r.label === label && r.stat === 'prob'));
        const xs = linearScale(timeDomain(times), [canvas.innerLeft, canvas.innerRight]);
        xsOut = xs;
        const numeric = times.map(Number);
        const allNumeric = numeric.every((v) => Number.isFinite(v));
        const pts: Array<readonly [number, number]> = [];
        times.forEach((t, i) => {
            const v = prob.get(t);
            if (v !== undefined) pts.push([allNumeric ? xs(Number(t)) : xs(i), ys(v)]);
        });
        canvas.polyline(pts, PALETTE[k % PALETTE.length], 1.8);
        canvas.text(canvas.innerRight - 4, canvas.innerTop + 14 + 13 * k, label, {
            anchor: 'end',
            size: 10,
            fill: PALETTE[k % PALETTE.length],
        });
    });
    canvas.axes(xsOut, ys);
    canvas.line(canvas.innerLeft, ys(0.5), canvas.innerRight, ys(0.5), '#999999', 0.8, '4 3');
    canvas.title('sequential model probability');
    return canvas.render();
}

/** Sparsity heatmap of a matrix snapshot (white = structural zero). */
export function renderHeatmap(rows: readonly ExportRow[], matrix: string): string {
    const cellRe = new RegExp(`^${matrix}\\[(.+),(.+)\\]$`);
    const cells: Array<{ r: string; c: string; v: number }> = [];
    for (const row of rows) {
        if (row.kind !== 'factor' || row.stat !== 'entry') continue;
        const m = cellRe.exec(row.label);
        if (m) cells.push({ r: m[1], c: m[2], v: row.value });
    }
    if (cells.length === 0) {
        throw new SchemaError(`no '${matrix}[row,col]' entries in the factor table`);
    }
    const rowsSeen: string[] = [];
    const colsSeen: string[] = [];
    for (const { r, c } of cells) {
        if (!rowsSeen.includes(r)) rowsSeen.push(r);
        if (!colsSeen.includes(c)) colsSeen.push(c);
    }
    const vmax = Math.max(...cells.map(({ v }) => Math.abs(v)), 1e-300);

    const cw = Math.min(42, (WIDTH - 140) / colsSeen.length);
    const ch = Math.min(26, (HEIGHT - 90) / rowsSeen.length);
    const left = 110;
    const top = 46;
    const canvas = new Canvas(
        Math.max(WIDTH, left + cw * colsSeen.length + 20),
        Math.max(220, top + ch * rowsSeen.length + 44),
        { top: 0, right: 0, bottom: 0, left: 0 },
    );
    for (const { r, c, v } of cells) {
        const i = rowsSeen.indexOf(r);
        const j = colsSeen.indexOf(c);
        canvas.rect(left + j * cw, top + i * ch, cw, ch, shade(v, vmax), '#cccccc');
        if (v !== 0) {
            canvas.text(left + j * cw + cw / 2, top + i * ch + ch / 2 + 3, compact(v), {
                anchor: 'middle',
                size: 8,
            });
        }
    }
    rowsSeen.forEach((r, i) => canvas.text(left - 6, top + i * ch + ch / 2 + 3, r, { anchor: 'end', size: 9 }));
    colsSeen.forEach((c, j) =>
        canvas.text(left + j * cw + cw / 2, top + ch * rowsSeen.length + 12, c, {
            anchor: 'middle',
            size: 9,
            rotate: colsSeen.length > 10 ? 45 : 0,
        }),
    );
    canvas.title(`sparsity pattern: ${matrix} (white = 0)`);
    return canvas.render();
}

function shade(v: number, vmax: number): string {
    if (v === 0) return '#ffffff';
    const t = Math.min(1, Math.abs(v) / vmax);
    const level = Math.round(235 - 165 * t);
    return v > 0 ? rgb(level, level, 235) : rgb(235, level, level);
}

function rgb(r: number, g: number, b: number): string {
    return `rgb(${r},${g},${b})`;
}

function compact(v: number): string {
    const a = Math.abs(v);
    if (a >= 100 || a < 0.01) return v.toExponential(1);
    return v.toFixed(2);
}

/** Factor trajectories, labelled with their singular values. */
export function renderFactors(rows: readonly ExportRow[], factors?: readonly string[]): string {
    const all = labelsWithStat(rows, 'factor', 'phi');
    const chosen = factors && factors.length ? factors : all;
    if (chosen.length === 0) {
        throw new SchemaError("no factor rows with stat 'phi'");
    }
    for (const f of chosen) {
        if (!all.includes(f)) throw new SchemaError(`factor '${f}' not present in the table`);
    }
    const canvas = new Canvas(WIDTH, HEIGHT);
    const values: number[] = [];
    const seriesByFactor = new Map<string, Map<string, number>>();
    for (const f of chosen) {
        const s = statSeries(rows, 'factor', f, 'phi');
        seriesByFactor.set(f, s);
        for (const v of s.values()) values.push(v);
    }
    const times = timeAxis(rows.filter((r) => r.kind === 'factor' && r.stat === 'phi'));
    const ys = linearScale(extent(values), [canvas.innerBottom, canvas.innerTop]);
    const xs = linearScale(timeDomain(times), [canvas.innerLeft, canvas.innerRight]);
    const numeric = times.map(Number);
    const allNumeric = numeric.every((v) => Number.isFinite(v));
    canvas.axes(xs, ys);
    if (ys.domain[0] < 0 && ys.domain[1] > 0) {
        canvas.line(canvas.innerLeft, ys(0), canvas.innerRight, ys(0), '#999999', 0.8, '4 3');
    }
    chosen.forEach((f, k) => {
        const s = seriesByFactor.get(f)!;
        const pts: Array<readonly [number, number]> = [];
        times.forEach((t, i) => {
            const v = s.get(t);
            if (v !== undefined) pts.push([allNumeric ? xs(Number(t)) : xs(i), ys(v)]);
        });
        const colour = PALETTE[k % PALETTE.length];
        canvas.polyline(pts, colour, 1.6);
        const sv = statSeries(rows, 'factor', f, 'singular_value');
        const lastSv = times.map((t) => sv.get(t)).filter((v) => v !== undefined).pop();
        const tag = lastSv !== undefined ? `${f} (d=${lastSv.toPrecision(3)})` : f;
        canvas.text(canvas.innerLeft + 8, canvas.innerTop + 14 + 13 * k, tag, { size: 10, fill: colour });
    });
    canvas.title('factor trajectories');
    return canvas.render();
}
