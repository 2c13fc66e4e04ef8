import { describe, expect, it } from 'vitest';

import { parseExportTable, SchemaError, statSeries, timeAxis, labelsWithStat } from '../src/schema.js';

const GOOD = [
    't,kind,label,stat,value',
    '1990,counterfactual,e0,q50,0.25',
    '1991,counterfactual,e0,q50,-0.5',
    '1990,counterfactual,e0,outcome,0.3',
    '1990,factor,"gamma[a,b]",entry,0.75',
].join('\n');

describe('parseExportTable', () => {
    it('parses rows and preserves quoted labels with commas', () => {
        const rows = parseExportTable(GOOD);
        expect(rows).toHaveLength(4);
        expect(rows[3].label).toBe('gamma[a,b]');
        expect(rows[1].value).toBe(-0.5);
    });

    it('rejects a foreign header', () => {
        expect(() => parseExportTable('a,b\n1,2')).toThrow(SchemaError);
    });

    it('rejects unknown kinds', () => {
        const text = 't,kind,label,stat,value\n1,nonsense,x,s,1.0';
        expect(() => parseExportTable(text)).toThrow(/unknown kind/);
    });

    it('rejects non-numeric values', () => {
        const text = 't,kind,label,stat,value\n1,factor,x,s,abc';
        expect(() => parseExportTable(text)).toThrow(/non-numeric/);
    });

    it('rejects empty tables', () => {
        expect(() => parseExportTable('t,kind,label,stat,value\n')).toThrow(/no data rows/);
        expect(() => parseExportTable('')).toThrow(/empty/);
    });
});

describe('table helpers', () => {
    it('builds time-ordered stat series', () => {
        const rows = parseExportTable(GOOD);
        const s = statSeries(rows, 'counterfactual', 'e0', 'q50');
        expect([...s.entries()]).toEqual([
            ['1990', 0.25],
            ['1991', -0.5],
        ]);
    });

    it('sorts numeric times numerically', () => {
        const text = 't,kind,label,stat,value\n10,monitor,m,prob,0.5\n9,monitor,m,prob,0.4';
        expect(timeAxis(parseExportTable(text))).toEqual(['9', '10']);
    });

    it('lists labels carrying a stat', () => {
        const rows = parseExportTable(GOOD);
        expect(labelsWithStat(rows, 'counterfactual', 'q50')).toEqual(['e0']);
    });
});
