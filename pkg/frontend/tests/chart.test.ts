import { describe, expect, it } from 'vitest';

import { chartScale, ivSeries } from '../src/chart.js';

describe('iv chart', () => {
  it('renders a 21-point linear sweep as 21 collinear points', () => {
    const records: number[][] = [];
    for (let i = 0; i < 21; i += 1) {
      const v = -1.0 + i * 0.1;
      records.push([v, v / 1000]);
    }
    const points = ivSeries(records);
    expect(points).toHaveLength(21);
    // visually linear: every point sits on the line y = x/1000
    for (const point of points) {
      expect(Math.abs(point.y - point.x / 1000)).toBeLessThan(1e-12);
    }
    const scale = chartScale(points);
    expect(scale.xMin).toBeLessThan(-1);
    expect(scale.xMax).toBeGreaterThan(1);
  });

  it('is axes-only when empty', () => {
    expect(ivSeries([])).toEqual([]);
    const scale = chartScale([]);
    expect(scale.xMax).toBeGreaterThan(scale.xMin);
    expect(scale.yMax).toBeGreaterThan(scale.yMin);
  });

  it('renders a single point as one marker', () => {
    const points = ivSeries([[0.5, 0.0005]]);
    expect(points).toEqual([{ x: 0.5, y: 0.0005 }]);
    const scale = chartScale(points);
    expect(scale.xMin).toBeLessThan(0.5);
    expect(scale.xMax).toBeGreaterThan(0.5);
  });

  it('skips malformed rows', () => {
    expect(ivSeries([[1], [1, 2], [Number.NaN, 2], [3, 4]])).toEqual([
      { x: 1, y: 2 },
      { x: 3, y: 4 },
    ]);
  });
});
