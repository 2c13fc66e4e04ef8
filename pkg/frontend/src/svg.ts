/**
 * Minimal deterministic SVG scene builder: linear scales, axes, bands,
 * polylines, crosses, and heat cells. No DOM, no randomness, fixed numeric
 * formatting, so identical inputs produce byte-identical images.
 */

export interface Margins {
    readonly top: number;
    readonly right: number;
    readonly bottom: number;
    readonly left: number;
}

export const DEFAULT_MARGINS: Margins = { top: 34, right: 16, bottom: 34, left: 52 };

/** Format a coordinate with fixed precision (keeps output byte-stable). */
export function fmt(v: number): string {
    const s = v.toFixed(2);
    return s === '-0.00' ? '0.00' : s;
}

/** Format a tick value compactly. */
export function fmtTick(v: number): string {
    if (v === 0) return '0';
    const a = Math.abs(v);
    if (a >= 1e5 || a < 1e-3) return v.toExponential(1);
    const s = v.toPrecision(4);
    return s.includes('.') ? s.replace(/\.?0+$/, '') : s;
}

export interface Scale {
    (v: number): number;
    readonly domain: readonly [number, number];
}

/** Affine map from a data domain onto pixel range. */
export function linearScale(domain: readonly [number, number], range: readonly [number, number]): Scale {
    const [d0, d1] = domain;
    const [r0, r1] = range;
    const span = d1 - d0 === 0 ? 1 : d1 - d0;
    const f = ((v: number) => r0 + ((v - d0) / span) * (r1 - r0)) as { (v: number): number; domain: readonly [number, number] };
    f.domain = domain;
    return f as Scale;
}

/** Round tick positions covering a domain (deterministic "nice" steps). */
export function ticks(domain: readonly [number, number], count = 5): number[] {
    const [lo, hi] = domain;
    if (lo === hi) return [lo];
    const raw = (hi - lo) / count;
    const mag = Math.pow(10, Math.floor(Math.log10(raw)));
    const norm = raw / mag;
    const step = (norm >= 5 ? 5 : norm >= 2 ? 2 : 1) * mag;
    const start = Math.ceil(lo / step) * step;
    const out: number[] = [];
    for (let v = start; v <= hi + 1e-9 * step; v += step) {
        out.push(Math.abs(v) < 1e-12 * step ? 0 : v);
    }
    return out;
}

export function extent(values: Iterable<number>): [number, number] {
    let lo = Infinity;
    let hi = -Infinity;
    for (const v of values) {
        if (v < lo) lo = v;
        if (v > hi) hi = v;
    }
    if (!Number.isFinite(lo)) return [0, 1];
    if (lo === hi) return [lo - 1, hi + 1];
    const pad = 0.06 * (hi - lo);
    return [lo - pad, hi + pad];
}

export const PALETTE = ['#2c5f9e', '#c23b22', '#3a7d44', '#8a5fa0', '#b8860b', '#3b8ea5', '#aa3355', '#557755'];

/** An SVG document accumulating shapes in draw order. */
export class Canvas {
    private parts: string[] = [];

    constructor(
        readonly width: number,
        readonly height: number,
        readonly margins: Margins = DEFAULT_MARGINS,
    ) {}

    get innerLeft(): number {
        return this.margins.left;
    }

    get innerRight(): number {
        return this.width - this.margins.right;
    }

    get innerTop(): number {
        return this.margins.top;
    }

    get innerBottom(): number {
        return this.height - this.margins.bottom;
    }

    add(fragment: string): void {
        this.parts.push(fragment);
    }

    line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, dash = ''): void {
        const d = dash ? ` stroke-dasharray="${dash}"` : '';
        this.add(
            `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" stroke="${stroke}" stroke-width="${width}"${d}/>`,
        );
    }

    polyline(points: ReadonlyArray<readonly [number, number]>, stroke: string, width = 1.5): void {
        if (points.length === 0) return;
        const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(' ');
        this.add(`<polyline points="${pts}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`);
    }

    polygon(points: ReadonlyArray<readonly [number, number]>, fill: string, opacity = 1): void {
        if (points.length === 0) return;
        const pts = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(' ');
        this.add(`<polygon points="${pts}" fill="${fill}" fill-opacity="${opacity}" stroke="none"/>`);
    }

    rect(x: number, y: number, w: number, h: number, fill: string, stroke = 'none'): void {
        this.add(
            `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" fill="${fill}" stroke="${stroke}"/>`,
        );
    }

    cross(x: number, y: number, size = 3.5, stroke = '#111111'): void {
        this.line(x - size, y - size, x + size, y + size, stroke, 1.3);
        this.line(x - size, y + size, x + size, y - size, stroke, 1.3);
    }

    text(x: number, y: number, content: string, opts: { anchor?: string; size?: number; fill?: string; rotate?: number } = {}): void {
        const anchor = opts.anchor ?? 'start';
        const size = opts.size ?? 11;
        const fill = opts.fill ?? '#222222';
        const rot = opts.rotate ? ` transform="rotate(${opts.rotate} ${fmt(x)} ${fmt(y)})"` : '';
        this.add(
            `<text x="${fmt(x)}" y="${fmt(y)}" text-anchor="${anchor}" font-family="sans-serif" font-size="${size}" fill="${fill}"${rot}>${escapeXml(content)}</text>`,
        );
    }

    /** Left/bottom axes with tick marks and labels for the given scales. */
    axes(xs: Scale, ys: Scale, xLabels?: ReadonlyMap<number, string>): void {
        const yB = this.innerBottom;
        this.line(this.innerLeft, yB, this.innerRight, yB, '#444444');
        this.line(this.innerLeft, this.innerTop, this.innerLeft, yB, '#444444');
        for (const tv of ticks(xs.domain)) {
            const x = xs(tv);
            if (x < this.innerLeft - 0.5 || x > this.innerRight + 0.5) continue;
            this.line(x, yB, x, yB + 4, '#444444');
            const label = xLabels?.get(tv) ?? fmtTick(tv);
            this.text(x, yB + 16, label, { anchor: 'middle', size: 10 });
        }
        for (const tv of ticks(ys.domain)) {
            const y = ys(tv);
            if (y < this.innerTop - 0.5 || y > yB + 0.5) continue;
            this.line(this.innerLeft - 4, y, this.innerLeft, y, '#444444');
            this.text(this.innerLeft - 7, y + 3.5, fmtTick(tv), { anchor: 'end', size: 10 });
            this.line(this.innerLeft, y, this.innerRight, y, '#eeeeee', 0.6);
        }
    }

    title(content: string): void {
        this.text(this.width / 2, 18, content, { anchor: 'middle', size: 13, fill: '#000000' });
    }

    render(): string {
        return [
            `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" viewBox="0 0 ${this.width} ${this.height}">`,
            `<rect x="0" y="0" width="${this.width}" height="${this.height}" fill="#ffffff"/>`,
            ...this.parts,
            '</svg>',
        ].join('\n');
    }
}

function escapeXml(s: string): string {
    return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;').replace(/"/g, '&quot;');
}
