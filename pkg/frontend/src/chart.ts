/** I-V chart series from recorded (voltage, current) tuples. */

export interface ChartPoint {
  x: number;
  y: number;
}

/** First two columns of each record become (x, y); shorter rows are skipped. */
export function ivSeries(records: number[][]): ChartPoint[] {
  const points: ChartPoint[] = [];
  for (const row of records) {
    if (row.length >= 2 && Number.isFinite(row[0]) && Number.isFinite(row[1])) {
      points.push({ x: row[0], y: row[1] });
    }
  }
  return points;
}

export interface ChartScale {
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

/** Axis bounds with a small margin; identity-safe for empty/single series. */
export function chartScale(points: ChartPoint[]): ChartScale {
  if (points.length === 0) {
    return { xMin: -1, xMax: 1, yMin: -1, yMax: 1 };
  }
  let xMin = points[0].x, xMax = points[0].x;
  let yMin = points[0].y, yMax = points[0].y;
  for (const p of points) {
    if (p.x < xMin) xMin = p.x;
    if (p.x > xMax) xMax = p.x;
    if (p.y < yMin) yMin = p.y;
    if (p.y > yMax) yMax = p.y;
  }
  const padX = (xMax - xMin) * 0.05 || 1;
  const padY = (yMax - yMin) * 0.05 || Math.abs(yMax) * 0.05 || 1;
  return { xMin: xMin - padX, xMax: xMax + padX, yMin: yMin - padY, yMax: yMax + padY };
}
