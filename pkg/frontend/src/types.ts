// Shapes of /v1 API responses the dashboard consumes.

export interface ProjectInfo {
  project_id: string;
  name: string;
  task_mode: string;
  created_at: number;
  quantile: number;
}

export interface DetectorSummaries {
  gmm?: { k: number; threshold: number; bic: number };
  pca?: { r: number; threshold: number; explained_variance_ratio: number[] };
}

export interface ProjectDetail extends ProjectInfo {
  ref: null | {
    n_rows: number;
    feature_names: string[];
    quantile: number;
    detectors: DetectorSummaries;
  };
}

/** Series point: [timestamp_ms, value, is_outlier]. */
export type SeriesPoint = [number, number, boolean];

export interface SummaryReport {
  window: { from: number; to: number };
  total_samples: number;
  outlier_count: number;
  series: Record<string, SeriesPoint[]>;
}

export interface Verdict {
  detector_kind: "gmm" | "pca";
  score: number;
  threshold: number;
  is_outlier: boolean;
}

export interface PredictionEntry {
  label: string;
  probability: number;
}

export interface LogRow {
  log_id: string;
  sample_id: string;
  timestamp: number;
  pred_label: string | null;
  pred_probability: number | null;
  has_outlier: boolean;
  verdicts: Verdict[];
  heatmap_methods: string[];
  has_image: boolean;
}

export interface LogTable {
  logs: LogRow[];
  total: number;
  limit: number;
  offset: number;
}

export interface ReferenceBand {
  min: number;
  p10: number;
  median: number;
  p90: number;
  max: number;
}

export interface LogDetail {
  log_id: string;
  project_id: string;
  sample_id: string;
  timestamp: number;
  prediction: PredictionEntry[];
  feature_kind: string | null;
  feature_names: string[] | null;
  feature_values: number[] | null;
  verdicts: Verdict[];
  image_key: string | null;
  heatmap_keys: Record<string, string>;
  target_class: string | null;
  feature_reference: Record<string, { sample: number; ref: ReferenceBand }> | null;
}

export interface TokenRow {
  token_hash: string;
  created_at: number;
  revoked: boolean;
}

export const CANONICAL_FEATURE_NAMES = [
  "min", "max", "range", "mean", "median", "p10", "p90", "iqr",
  "variance", "std", "skewness", "kurtosis", "energy", "rms",
  "entropy", "uniformity",
] as const;

export type FeatureName = (typeof CANONICAL_FEATURE_NAMES)[number];
