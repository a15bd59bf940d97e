// Data Inspector view model: header totals plus one plottable series per
// selected metric, outlier points marked. No statistics are computed here;
// every value comes straight from the summary response.

import type { SummaryReport } from "./types.js";

export interface SeriesViewModel {
  metric: string;
  points: { timestamp: number; value: number; isOutlier: boolean }[];
}

export interface InspectorViewModel {
  totalSamples: number;
  outlierCount: number;
  series: SeriesViewModel[];
}

export function buildInspectorViewModel(summary: SummaryReport, selectedMetrics: string[]): InspectorViewModel {
  const series: SeriesViewModel[] = [];
  for (const metric of selectedMetrics) {
    const points = summary.series[metric];
    if (!points) continue;
    series.push({
      metric,
      points: points.map(([timestamp, value, isOutlier]) => ({ timestamp, value, isOutlier })),
    });
  }
  return {
    totalSamples: summary.total_samples,
    outlierCount: summary.outlier_count,
    series,
  };
}

/** Header line, e.g. "100 samples / 5 outliers". */
export function headerText(vm: InspectorViewModel): string {
  return `${vm.totalSamples} samples / ${vm.outlierCount} outliers`;
}
