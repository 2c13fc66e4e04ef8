/**
 * Export-table schema: long-format rows (t, kind, label, stat, value) with a
 * closed kind enumeration. The renderer consumes these tables verbatim; all
 * statistics are precomputed upstream.
 */

export const KINDS = [
    'forecast',
    'posterior',
    'counterfactual',
    'marglik',
    'factor',
    'monitor',
] as const;

export type Kind = (typeof KINDS)[number];

export interface ExportRow {
    readonly t: string;
    readonly kind: Kind;
    readonly label: string;
    readonly stat: string;
    readonly value: number;
}

/** Raised when an input table does not conform to the export schema. */
export class SchemaError extends Error {
    constructor(message: string) {
        super(message);
        this.name = 'SchemaError';
    }
}

const HEADER = ['t', 'kind', 'label', 'stat', 'value'];

/**
 * Split one CSV line honouring double-quoted fields (labels may contain
 * commas, e.g. matrix cell names).
 */
function splitCsvLine(line: string): string[] {
    const out: string[] = [];
    let field = '';
    let quoted = false;
    for (let i = 0; i < line.length; i++) {
        const ch = line[i];
        if (quoted) {
            if (ch === '"') {
                if (line[i + 1] === '"') {
                    field += '"';
                    i++;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
        } else if (ch === '"') {
            quoted = true;
        } else if (ch === ',') {
            out.push(field);
            field = '';
        } else {
            field += ch;
        }
    }
    out.push(field);
    return out;
}

/**
 * Parse an export table, validating the header, the kind enumeration, and
 * the numeric value column.
 */
export function parseExportTable(text: string, source = 'table'): ExportRow[] {
    const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
    if (lines.length === 0) {
        throw new SchemaError(`${source}: empty file`);
    }
    const header = splitCsvLine(lines[0]);
    if (header.length !== HEADER.length || header.some((h, i) => h !== HEADER[i])) {
        throw new SchemaError(`${source}: header [${header.join(', ')}] is not the export schema`);
    }
    const rows: ExportRow[] = [];
    for (let i = 1; i < lines.length; i++) {
        const cells = splitCsvLine(lines[i]);
        if (cells.length !== 5) {
            throw new SchemaError(`${source}: row ${i + 1} has ${cells.length} cells`);
        }
        const kind = cells[1] as Kind;
        if (!KINDS.includes(kind)) {
            throw new SchemaError(`${source}: row ${i + 1} has unknown kind '${cells[1]}'`);
        }
        const value = Number(cells[4]);
        if (!Number.isFinite(value)) {
            throw new SchemaError(`${source}: row ${i + 1} has non-numeric value '${cells[4]}'`);
        }
        rows.push({ t: cells[0], kind, label: cells[2], stat: cells[3], value });
    }
    if (rows.length === 0) {
        throw new SchemaError(`${source}: no data rows`);
    }
    return rows;
}

/** Ordered unique time labels, numerically sorted when all are numeric. */
export function timeAxis(rows: readonly ExportRow[]): string[] {
    const seen = new Set<string>();
    for (const r of rows) seen.add(r.t);
    const times = [...seen];
    if (times.every((t) => Number.isFinite(Number(t)))) {
        times.sort((a, b) => Number(a) - Number(b));
    } else {
        times.sort();
    }
    return times;
}

/** Map time -> value for one (kind, label, stat) selection. */
export function statSeries(
    rows: readonly ExportRow[],
    kind: Kind,
    label: string,
    stat: string,
): Map<string, number> {
    const out = new Map<string, number>();
    for (const r of rows) {
        if (r.kind === kind && r.label === label && r.stat === stat) {
            out.set(r.t, r.value);
        }
    }
    return out;
}

/** Unique labels carrying a given (kind, stat) pair, in first-seen order. */
export function labelsWithStat(rows: readonly ExportRow[], kind: Kind, stat: string): string[] {
    const seen = new Set<string>();
    const out: string[] = [];
    for (const r of rows) {
        if (r.kind === kind && r.stat === stat && !seen.has(r.label)) {
            seen.add(r.label);
            out.push(r.label);
        }
    }
    return out;
}
