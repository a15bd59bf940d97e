// Dashboard view state and its transitions. Pure data in, pure data out;
// every number rendered traces back to an API response.

import { CANONICAL_FEATURE_NAMES, type FeatureName } from "./types.js";

export interface TimeRange {
  from: number;
  to: number;
}

export interface ViewState {
  userId: string | null;
  activeProject: string | null;
  timeRange: TimeRange | null; // null = full history
  selectedMetrics: FeatureName[];
  selectedLog: string | null;
  overlayAlpha: number;
  xaiMethod: string | null;
}

export const DEFAULT_METRICS: FeatureName[] = CANONICAL_FEATURE_NAMES.slice(0, 5) as FeatureName[];

export function initialState(userId: string | null = null): ViewState {
  return {
    userId,
    activeProject: null,
    timeRange: null,
    selectedMetrics: [...DEFAULT_METRICS],
    selectedLog: null,
    overlayAlpha: 0.5,
    xaiMethod: null,
  };
}

export function clampAlpha(alpha: number): number {
  if (Number.isNaN(alpha)) return 0;
  return Math.min(1, Math.max(0, alpha));
}

export function setOverlayAlpha(state: ViewState, alpha: number): ViewState {
  return { ...state, overlayAlpha: clampAlpha(alpha) };
}

export function setTimeRange(state: ViewState, range: TimeRange | null): ViewState {
  if (range && range.from > range.to) {
    range = { from: range.to, to: range.from };
  }
  return { ...state, timeRange: range };
}

/** Switching projects resets everything except user identity. */
export function switchProject(state: ViewState, projectId: string | null): ViewState {
  return { ...initialState(state.userId), activeProject: projectId };
}

export function toggleMetric(state: ViewState, metric: FeatureName): ViewState {
  const selected = state.selectedMetrics.includes(metric)
    ? state.selectedMetrics.filter((m) => m !== metric)
    : [...state.selectedMetrics, metric];
  return { ...state, selectedMetrics: selected };
}

export function selectLog(state: ViewState, logId: string | null): ViewState {
  return { ...state, selectedLog: logId, xaiMethod: null };
}
