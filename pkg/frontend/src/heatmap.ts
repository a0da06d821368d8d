// Heatmap of one posterior quantity over the manufacturing grid.
// One cell per grid dose, values straight from the API (after at most
// the sign flip handled by the caller); no interpolation between cells.

import { formatDose, formatNumber, sameDose } from "./format.js";

export interface HeatmapOptions {
  // dose whose cell gets the next-dose highlight
  highlight?: number[] | null;
  // dose whose cell gets the current-best marker
  marker?: number[] | null;
}

function cellColor(value: number, lo: number, hi: number): string {
  const t = hi > lo ? (value - lo) / (hi - lo) : 0.5;
  // light parchment to deep blue, readable with dark text throughout
  const light = 94 - Math.round(t * 52);
  return `hsl(215, 55%, ${light}%)`;
}

export function renderHeatmap(
  grid: number[][],
  values: number[],
  opts: HeatmapOptions = {},
): HTMLElement {
  if (grid.length !== values.length) {
    throw new Error(`grid has ${grid.length} doses but ${values.length} values`);
  }
  const el = document.createElement("div");
  el.className = "heatmap";

  const j = grid[0]?.length ?? 0;
  // lay 2-D grids out as a dose1 x dose2 lattice, anything else as a strip
  const cols = j === 2 ? new Set(grid.map((d) => d[0])).size : grid.length;
  el.style.gridTemplateColumns = `repeat(${cols}, 1fr)`;

  const finite = values.filter(Number.isFinite);
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);

  // row-major with dose2 decreasing so the vertical axis points up
  const order = grid.map((_, i) => i);
  if (j === 2) {
    order.sort((a, b) => {
      const da = grid[a]!, db = grid[b]!;
      return db[1]! - da[1]! || da[0]! - db[0]!;
    });
  }

  for (const i of order) {
    const dose = grid[i]!;
    const value = values[i]!;
    const cell = document.createElement("div");
    cell.className = "cell";
    cell.dataset.dose = JSON.stringify(dose);
    cell.dataset.value = String(value);
    cell.style.background = cellColor(value, lo, hi);
    cell.title = `${formatDose(dose)}: ${value}`;
    cell.textContent = formatNumber(value);
    if (sameDose(dose, opts.highlight ?? null)) cell.classList.add("next");
    if (sameDose(dose, opts.marker ?? null)) cell.classList.add("dhat");
    el.appendChild(cell);
  }
  return el;
}
