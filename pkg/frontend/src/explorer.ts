// Data explorer view model: paginated log table with outlier filter, plus
// CSV export bookkeeping.

import type { LogTable } from "./types.js";

export interface ExplorerRow {
  logId: string;
  sampleId: string;
  timestamp: number;
  prediction: string;
  flagged: boolean;
  heatmapMethods: string[];
}

export interface ExplorerViewModel {
  rows: ExplorerRow[];
  total: number;
  page: number;
  pageCount: number;
  outlierOnly: boolean;
}

export function buildExplorerViewModel(table: LogTable, outlierOnly: boolean): ExplorerViewModel {
  const rows = table.logs.map((log) => ({
    logId: log.log_id,
    sampleId: log.sample_id,
    timestamp: log.timestamp,
    prediction:
      log.pred_label === null || log.pred_probability === null
        ? ""
        : `${log.pred_label} (${(log.pred_probability * 100).toFixed(1)}%)`,
    flagged: log.has_outlier,
    heatmapMethods: log.heatmap_methods,
  }));
  return {
    rows,
    total: table.total,
    page: table.limit > 0 ? Math.floor(table.offset / table.limit) : 0,
    pageCount: table.limit > 0 ? Math.max(1, Math.ceil(table.total / table.limit)) : 1,
    outlierOnly,
  };
}
