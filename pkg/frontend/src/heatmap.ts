/** Live heatmap model for scan pixel events.
 *
 * Holds the received (col,row,value) triples and renders grayscale levels
 * min-max normalized over everything received so far. Normalization is
 * recomputed per batch (call levels() once per render), not per pixel.
 * A finished frame normalizes exactly like the exported PGM: 0..65535 with
 * a constant frame rendering all zeros.
 */

export const LEVEL_MAX = 65535;

export interface HeatmapCell {
  col: number;
  row: number;
  value: number;
}

/** PixelMeasured payload -> heatmap cell. */
export function pixelToCell(payload: { col: number; row: number; current_A: number }): HeatmapCell {
  return { col: payload.col, row: payload.row, value: payload.current_A };
}

export class HeatmapModel {
  readonly nx: number;
  readonly ny: number;
  private readonly values: (number | null)[];
  private received = 0;
  private finished = false;

  constructor(nx: number, ny: number) {
    if (nx < 1 || ny < 1) {
      throw new Error('heatmap needs at least one cell');
    }
    this.nx = nx;
    this.ny = ny;
    this.values = new Array<number | null>(nx * ny).fill(null);
  }

  ingest(cell: HeatmapCell): void {
    const { col, row, value } = cell;
    if (col < 0 || col >= this.nx || row < 0 || row >= this.ny) {
      return; // stale event from a different plan; ignore
    }
    const index = row * this.nx + col;
    if (this.values[index] === null) {
      this.received += 1;
    }
    this.values[index] = value;
  }

  markFinished(): void {
    this.finished = true;
  }

  get pixelsReceived(): number {
    return this.received;
  }

  get isFinished(): boolean {
    return this.finished;
  }

  get isEmpty(): boolean {
    return this.received === 0;
  }

  /** Grayscale level per cell (row-major); null = placeholder, not yet measured. */
  levels(): (number | null)[] {
    const seen = this.values.filter((v): v is number => v !== null);
    if (seen.length === 0) {
      return this.values.slice();
    }
    let lo = seen[0];
    let hi = seen[0];
    for (const v of seen) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    const span = hi - lo;
    return this.values.map((v) => {
      if (v === null) {
        return null;
      }
      if (span === 0) {
        return 0;
      }
      return Math.round(((v - lo) / span) * LEVEL_MAX);
    });
  }
}
