/**
 * Plot jobs: which table feeds which figure kind, and where the image goes.
 * A job list is a JSON array of job objects; single jobs can also be built
 * from CLI flags.
 */

import { readFileSync, writeFileSync, mkdirSync } from 'node:fs';
import { dirname, resolve } from 'node:path';

import {
    FIGURE_KINDS,
    FigureKind,
    renderCoefficients,
    renderFactors,
    renderHeatmap,
    renderLevels,
    renderMonitor,
    renderTrajectory,
} from './figures.js';
import { SchemaError, parseExportTable } from './schema.js';

export interface PlotJob {
    readonly kind: FigureKind;
    /** export table path, relative to the export directory */
    readonly table: string;
    /** output image path, relative to the output directory */
    readonly out: string;
    /** series label for trajectory/levels figures */
    readonly series?: string;
    /** coefficient labels for the coefficients figure */
    readonly labels?: readonly string[];
    /** matrix name (gamma | loadings | scores) for the heatmap figure */
    readonly matrix?: string;
    /** factor labels for the factors figure (all when omitted) */
    readonly factors?: readonly string[];
}

export function validateJob(job: Partial<PlotJob>, index = 0): PlotJob {
    const where = `job ${index}`;
    if (!job.kind || !(FIGURE_KINDS as readonly string[]).includes(job.kind)) {
        throw new SchemaError(`${where}: kind must be one of ${FIGURE_KINDS.join(', ')}`);
    }
    if (!job.table) throw new SchemaError(`${where}: missing input table`);
    if (!job.out) throw new SchemaError(`${where}: missing output path`);
    if ((job.kind === 'trajectory' || job.kind === 'levels') && !job.series) {
        throw new SchemaError(`${where}: '${job.kind}' needs a series label`);
    }
    if (job.kind === 'coefficients' && (!job.labels || job.labels.length === 0)) {
        throw new SchemaError(`${where}: 'coefficients' needs coefficient labels`);
    }
    if (job.kind === 'heatmap' && !job.matrix) {
        throw new SchemaError(`${where}: 'heatmap' needs a matrix name`);
    }
    return job as PlotJob;
}

export function loadJobList(path: string): PlotJob[] {
    const doc = JSON.parse(readFileSync(path, 'utf8'));
    if (!Array.isArray(doc)) {
        throw new SchemaError(`${path}: job list must be a JSON array`);
    }
    return doc.map((j, i) => validateJob(j, i));
}

/** Render one job to its SVG string (pure; no filesystem writes). */
export function renderJob(job: PlotJob, tableText: string): string {
    const rows = parseExportTable(tableText, job.table);
    switch (job.kind) {
        case 'trajectory':
            return renderTrajectory(rows, job.series!);
        case 'levels':
            return renderLevels(rows, job.series!);
        case 'coefficients':
            return renderCoefficients(rows, job.labels!);
        case 'monitor':
            return renderMonitor(rows);
        case 'heatmap':
            return renderHeatmap(rows, job.matrix!);
        case 'factors':
            return renderFactors(rows, job.factors);
    }
}

export interface RunResult {
    readonly out: string;
    readonly bytes: number;
}

/** Execute jobs against an export directory, writing images under outDir. */
export function runJobs(jobs: readonly PlotJob[], exportDir: string, outDir: string): RunResult[] {
    const results: RunResult[] = [];
    for (const job of jobs) {
        const tableText = readFileSync(resolve(exportDir, job.table), 'utf8');
        const svg = renderJob(job, tableText);
        const target = resolve(outDir, job.out);
        mkdirSync(dirname(target), { recursive: true });
        writeFileSync(target, svg);
        results.push({ out: target, bytes: svg.length });
    }
    return results;
}
