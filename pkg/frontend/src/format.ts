// Display helpers. The only transform ever applied to an API value is
// the documented sign flip: outcomes are modeled as losses, so with the
// efficacy convention on (the default) latent-value displays show -f.
// Variances, acquisition values, masses, and doses are never flipped.

const FLIPPABLE = new Set(["mean", "f_star", "f_draws_mean"]);

export function displayValue(metric: string, value: number, efficacy: boolean): number {
  if (efficacy && FLIPPABLE.has(metric)) return -value;
  return value;
}

export function metricLabel(metric: string, efficacy: boolean): string {
  switch (metric) {
    case "mean":
      return efficacy ? "posterior mean (efficacy)" : "posterior mean (objective)";
    case "sigma2":
      return "posterior variance";
    case "aei":
      return "acquisition (AEI)";
    default:
      return metric;
  }
}

export function formatDose(dose: number[]): string {
  return `(${dose.join(", ")})`;
}

export function formatNumber(value: number): string {
  if (!Number.isFinite(value)) return String(value);
  const a = Math.abs(value);
  if (a !== 0 && (a >= 1e4 || a < 1e-3)) return value.toExponential(2);
  return value.toFixed(3);
}

export function sameDose(a: number[], b: number[] | null | undefined): boolean {
  if (!b || a.length !== b.length) return false;
  return a.every((v, i) => v === b[i]);
}
