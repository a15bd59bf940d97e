// Sample detail view models: per-feature comparison against the reference
// band (min/p10/median/p90/max) and the explainability tab.

import type { LogDetail, PredictionEntry } from "./types.js";

export interface FeatureBandViewModel {
  feature: string;
  sample: number;
  band: { min: number; p10: number; median: number; p90: number; max: number };
  /** Marker position within [0, 1] across the min..max band (clamped). */
  markerFraction: number;
  outOfBand: boolean;
}

export function buildFeatureBands(detail: LogDetail): FeatureBandViewModel[] {
  const reference = detail.feature_reference;
  if (!reference) return [];
  const out: FeatureBandViewModel[] = [];
  for (const [feature, { sample, ref }] of Object.entries(reference)) {
    const span = ref.max > ref.min ? ref.max - ref.min : 1;
    const fraction = (sample - ref.min) / span;
    out.push({
      feature,
      sample,
      band: ref,
      markerFraction: Math.min(1, Math.max(0, fraction)),
      outOfBand: sample < ref.min || sample > ref.max,
    });
  }
  return out;
}

export interface ExplainabilityViewModel {
  /** Class probabilities sorted descending, formatted like `golf ball (98.6%)`. */
  classes: { label: string; probability: number; display: string }[];
  topClassDisplay: string | null;
  heatmapMethods: string[];
}

export function formatClass(entry: PredictionEntry): string {
  return `${entry.label} (${(entry.probability * 100).toFixed(1)}%)`;
}

export function buildExplainability(detail: LogDetail): ExplainabilityViewModel {
  const classes = [...detail.prediction]
    .sort((a, b) => b.probability - a.probability)
    .map((entry) => ({
      label: entry.label,
      probability: entry.probability,
      display: formatClass(entry),
    }));
  return {
    classes,
    topClassDisplay: classes.length ? classes[0].display : null,
    heatmapMethods: Object.keys(detail.heatmap_keys).sort(),
  };
}
