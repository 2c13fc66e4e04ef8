/**
 * Batch figure renderer over an export directory.
 *
 * Usage:
 *   node dist/cli.js --export-dir out/demo --out-dir figures --jobs jobs.json
 *   node dist/cli.js --export-dir out/demo --out-dir figures \
 *       --kind trajectory --table counterfactual.csv --series e0 --out e0.svg
 */

import { loadJobList, runJobs, validateJob, PlotJob } from './jobs.js';
import { SchemaError } from './schema.js';

interface Args {
    exportDir: string;
    outDir: string;
    jobsPath?: string;
    single: Partial<PlotJob> & { kind?: never | PlotJob['kind'] };
}

function parseArgs(argv: string[]): Args {
    const args: Args = { exportDir: '.', outDir: '.', single: {} };
    const single: Record<string, unknown> = {};
    for (let i = 0; i < argv.length; i++) {
        const flag = argv[i];
        const need = () => {
            const v = argv[++i];
            if (v === undefined) throw new SchemaError(`flag ${flag} needs a value`);
            return v;
        };
        switch (flag) {
            case '--export-dir':
                args.exportDir = need();
                break;
            case '--out-dir':
                args.outDir = need();
                break;
            case '--jobs':
                args.jobsPath = need();
                break;
            case '--kind':
                single.kind = need();
                break;
            case '--table':
                single.table = need();
                break;
            case '--out':
                single.out = need();
                break;
            case '--series':
                single.series = need();
                break;
            case '--labels':
                single.labels = need().split(';');
                break;
            case '--matrix':
                single.matrix = need();
                break;
            case '--factors':
                single.factors = need().split(';');
                break;
            default:
                throw new SchemaError(`unknown flag ${flag}`);
        }
    }
    args.single = single as Args['single'];
    return args;
}

export function main(argv: string[]): number {
    try {
        const args = parseArgs(argv);
        const jobs = args.jobsPath
            ? loadJobList(args.jobsPath)
            : Object.keys(args.single).length
              ? [validateJob(args.single)]
              : [];
        if (jobs.length === 0) {
            process.stderr.write('nothing to do: pass --jobs or --kind/--table/--out\n');
            return 2;
        }
        const results = runJobs(jobs, args.exportDir, args.outDir);
        for (const r of results) {
            process.stdout.write(`wrote ${r.out} (${r.bytes} bytes)\n`);
        }
        return 0;
    } catch (err) {
        if (err instanceof SchemaError || err instanceof Error) {
            process.stderr.write(`error: ${err.message}\n`);
            return 1;
        }
        throw err;
    }
}

process.exitCode = main(process.argv.slice(2));
