// Browser shell: thin DOM layer over the typed view models. All numbers on
// screen come from API responses; this file only arranges them.

import { ApiClient, ApiError, LatestOnly, csvRowCount } from "./api.js";
import { buildExplainability, buildFeatureBands } from "./detail.js";
import { buildExplorerViewModel } from "./explorer.js";
import { buildInspectorViewModel, headerText } from "./inspector.js";
import { decodeTensor } from "./obzt.js";
import { compositeOverlay, heatmapToRgba, imageToRgba, type RgbaImage } from "./render.js";
import {
  DEFAULT_METRICS,
  initialState,
  selectLog,
  setOverlayAlpha,
  switchProject,
  toggleMetric,
  type ViewState,
} from "./state.js";
import { CANONICAL_FEATURE_NAMES, type FeatureName, type SummaryReport } from "./types.js";

const POLL_INTERVAL_MS = 10_000;

let client: ApiClient | null = null;
let state: ViewState = initialState();
let lastSummary: SummaryReport | null = null;
let pollTimer: number | null = null;
const summaryGuard = new LatestOnly();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(message: string) {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message;
  banner.style.display = message ? "block" : "none";
}

async function guarded<T>(work: () => Promise<T>): Promise<T | null> {
  try {
    const result = await work();
    showError("");
    return result;
  } catch (err) {
    showError(err instanceof ApiError ? `API error ${err.status}: ${err.message}` : String(err));
    return null;
  }
}

// -- login -------------------------------------------------------------

async function login() {
  const server = el<HTMLInputElement>("login-server").value.trim();
  const token = el<HTMLInputElement>("login-token").value.trim();
  const candidate = new ApiClient(server, token);
  const me = await guarded(() => candidate.me());
  if (!me) return;
  client = candidate;
  state = initialState(me.user_id);
  el<HTMLSpanElement>("who").textContent = me.display_name;
  el<HTMLDivElement>("login-pane").style.display = "none";
  el<HTMLDivElement>("main-pane").style.display = "block";
  await refreshProjects();
}

// -- projects & admin -----------------------------------------------------

async function refreshProjects() {
  if (!client) return;
  const listing = await guarded(() => client!.listProjects());
  if (!listing) return;
  const select = el<HTMLSelectElement>("project-select");
  select.innerHTML = "";
  for (const project of listing.projects) {
    const option = document.createElement("option");
    option.value = project.project_id;
    option.textContent = project.name;
    select.appendChild(option);
  }
  const first = listing.projects[0]?.project_id ?? null;
  onProjectSwitch(select.value || first);
}

function onProjectSwitch(projectId: string | null) {
  state = switchProject(state, projectId);
  lastSummary = null;
  renderMetricToggles();
  el<HTMLDivElement>("detail-pane").innerHTML = "";
  el<HTMLDivElement>("xai-pane").style.display = "none";
  void refreshInspector();
  void refreshExplorer();
  if (pollTimer !== null) window.clearInterval(pollTimer);
  pollTimer = window.setInterval(() => void refreshInspector(), POLL_INTERVAL_MS);
}

async function createProject() {
  if (!client) return;
  const name = window.prompt("Project name?");
  if (!name) return;
  const created = await guarded(() => client!.createProject(name));
  if (created) await refreshProjects();
}

async function deleteProject() {
  if (!client || !state.activeProject) return;
  if (!window.confirm("Delete this project, its logs and artifacts?")) return;
  await guarded(() => client!.deleteProject(state.activeProject!));
  await refreshProjects();
}

async function showTokens() {
  if (!client) return;
  const listing = await guarded(() => client!.listTokens());
  if (!listing) return;
  const pane = el<HTMLDivElement>("token-pane");
  pane.innerHTML = "<h3>API tokens</h3>";
  for (const token of listing.tokens) {
    const row = document.createElement("div");
    row.textContent = `${token.token_hash.slice(0, 12)}…  ${token.revoked ? "revoked" : "active"} `;
    if (!token.revoked) {
      const btn = document.createElement("button");
      btn.textContent = "revoke";
      btn.onclick = async () => {
        await guarded(() => client!.revokeToken(token.token_hash));
        await showTokens();
      };
      row.appendChild(btn);
    }
    pane.appendChild(row);
  }
  pane.style.display = "block";
}

// -- data inspector ----------------------------------------------------------

function renderMetricToggles() {
  const box = el<HTMLDivElement>("metric-toggles");
  box.innerHTML = "";
  for (const name of CANONICAL_FEATURE_NAMES) {
    const label = document.createElement("label");
    const checkbox = document.createElement("input");
    checkbox.type = "checkbox";
    checkbox.checked = state.selectedMetrics.includes(name as FeatureName);
    checkbox.onchange = () => {
      state = toggleMetric(state, name as FeatureName);
      void refreshInspector();
    };
    label.appendChild(checkbox);
    label.append(` ${name}`);
    box.appendChild(label);
  }
}

async function refreshInspector() {
  if (!client || !state.activeProject) return;
  const seq = summaryGuard.nextSeq();
  const summary = await guarded(() =>
    client!.summary(state.activeProject!, state.selectedMetrics, state.timeRange ?? {}),
  );
  if (!summary || !summaryGuard.accept(seq)) return; // stale response discarded
  lastSummary = summary;
  const vm = buildInspectorViewModel(summary, state.selectedMetrics);
  el<HTMLSpanElement>("inspector-header").textContent = headerText(vm);
  drawSeries(vm);
}

function drawSeries(vm: ReturnType<typeof buildInspectorViewModel>) {
  const canvas = el<HTMLCanvasElement>("series-canvas");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const palette = ["#4e79a7", "#f28e2b", "#59a14f", "#b07aa1", "#76b7b2", "#edc948"];
  const lanes = vm.series.length || 1;
  const laneHeight = canvas.height / lanes;
  vm.series.forEach((series, laneIndex) => {
    if (!series.points.length) return;
    const xs = series.points.map((p) => p.timestamp);
    const ys = series.points.map((p) => p.value);
    const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
    const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
    const sx = (t: number) => ((t - x0) / Math.max(x1 - x0, 1)) * (canvas.width - 20) + 10;
    const sy = (v: number) =>
      laneHeight * laneIndex + laneHeight - 14 - ((v - y0) / Math.max(y1 - y0, 1e-12)) * (laneHeight - 28);
    ctx.strokeStyle = palette[laneIndex % palette.length];
    ctx.beginPath();
    series.points.forEach((p, i) => (i ? ctx.lineTo(sx(p.timestamp), sy(p.value)) : ctx.moveTo(sx(p.timestamp), sy(p.value))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(series.metric, 12, laneHeight * laneIndex + 12);
    for (const p of series.points) {
      if (!p.isOutlier) continue;
      ctx.fillStyle = "#e15759";
      ctx.beginPath();
      ctx.arc(sx(p.timestamp), sy(p.value), 4, 0, Math.PI * 2);
      ctx.fill();
    }
  });
}

// -- explorer -----------------------------------------------------------------

let explorerOffset = 0;
const EXPLORER_LIMIT = 15;

async function refreshExplorer() {
  if (!client || !state.activeProject) return;
  const outlierOnly = el<HTMLInputElement>("outlier-filter").checked;
  const table = await guarded(() =>
    client!.logTable(state.activeProject!, {
      outlierOnly,
      limit: EXPLORER_LIMIT,
      offset: explorerOffset,
      ...(state.timeRange ?? {}),
    }),
  );
  if (!table) return;
  const vm = buildExplorerViewModel(table, outlierOnly);
  el<HTMLSpanElement>("explorer-count").textContent = `${vm.total} logs, page ${vm.page + 1}/${vm.pageCount}`;
  const body = el<HTMLTableSectionElement>("explorer-body");
  body.innerHTML = "";
  for (const row of vm.rows) {
    const tr = document.createElement("tr");
    tr.className = row.flagged ? "outlier" : "";
    tr.innerHTML =
      `<td>${row.sampleId}</td><td>${new Date(row.timestamp).toISOString()}</td>` +
      `<td>${row.prediction}</td><td>${row.flagged ? "OUTLIER" : ""}</td>`;
    const actions = document.createElement("td");
    const view = document.createElement("button");
    view.textContent = "View Features";
    view.onclick = () => void showDetail(row.logId);
    const remove = document.createElement("button");
    remove.textContent = "delete";
    remove.onclick = async () => {
      if (!window.confirm(`Delete log ${row.sampleId}?`)) return;
      await guarded(() => client!.deleteLog(row.logId));
      await Promise.all([refreshExplorer(), refreshInspector()]);
    };
    actions.append(view, remove);
    tr.appendChild(actions);
    body.appendChild(tr);
  }
}

async function exportCsv() {
  if (!client || !state.activeProject) return;
  const text = await guarded(() => client!.exportCsv(state.activeProject!, state.timeRange ?? {}));
  if (text === null) return;
  el<HTMLSpanElement>("export-info").textContent = `exported ${csvRowCount(text)} rows`;
  const blob = new Blob([text], { type: "text/csv" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "logs.csv";
  link.click();
  URL.revokeObjectURL(link.href);
}

// -- detail & XAI ---------------------------------------------------------------

async function showDetail(logId: string) {
  if (!client) return;
  const detail = await guarded(() => client!.logDetail(logId));
  if (!detail) return;
  state = selectLog(state, logId);

  const pane = el<HTMLDivElement>("detail-pane");
  pane.innerHTML = `<h3>Sample ${detail.sample_id}</h3>`;
  const bands = buildFeatureBands(detail);
  for (const band of bands) {
    const row = document.createElement("div");
    row.className = "band-row";
    const track = document.createElement("div");
    track.className = "band-track";
    const marker = document.createElement("div");
    marker.className = band.outOfBand ? "band-marker out" : "band-marker";
    marker.style.left = `${(band.markerFraction * 100).toFixed(1)}%`;
    track.appendChild(marker);
    row.append(
      Object.assign(document.createElement("span"), {
        className: "band-label",
        textContent: `${band.feature}: ${band.sample.toPrecision(6)}`,
      }),
      track,
    );
    pane.appendChild(row);
  }

  const xai = buildExplainability(detail);
  const classes = document.createElement("div");
  classes.innerHTML = `<h4>Explainability</h4>`;
  for (const entry of xai.classes) {
    const line = document.createElement("div");
    line.textContent = entry.display;
    classes.appendChild(line);
  }
  pane.appendChild(classes);

  const methods = document.createElement("div");
  for (const method of xai.heatmapMethods) {
    const btn = document.createElement("button");
    btn.textContent = `heatmap: ${method}`;
    btn.onclick = () => void showXai(detail.log_id, method);
    methods.appendChild(btn);
  }
  pane.appendChild(methods);
}

let currentImage: RgbaImage | null = null;
let currentHeatmapRgba: RgbaImage | null = null;
let currentHeatmapBytes: Uint8Array | null = null;

async function showXai(logId: string, method: string) {
  if (!client) return;
  const bytes = await guarded(() => client!.heatmapBytes(logId, method));
  if (!bytes) return;
  const tensor = decodeTensor(bytes);
  const [height, width] = [tensor.dims[0], tensor.dims[1]];
  currentHeatmapBytes = bytes;
  currentHeatmapRgba = heatmapToRgba(tensor.values, width, height);
  // stand-in "original" when the raw image was not uploaded: flat gray
  currentImage = imageToRgba(new Float32Array(width * height), width, height);
  state = { ...state, xaiMethod: method };
  el<HTMLDivElement>("xai-pane").style.display = "block";
  renderXai();
}

function renderXai() {
  if (!currentImage || !currentHeatmapRgba) return;
  const mode = el<HTMLSelectElement>("xai-mode").value;
  const alpha = Number(el<HTMLInputElement>("alpha-slider").value);
  state = setOverlayAlpha(state, alpha);

  const draw = (canvasId: string, image: RgbaImage) => {
    const canvas = el<HTMLCanvasElement>(canvasId);
    canvas.width = image.width;
    canvas.height = image.height;
    const ctx = canvas.getContext("2d");
    // fresh copy pins the buffer type to ArrayBuffer for ImageData
    const rgba = new Uint8ClampedArray(image.data);
    if (ctx) ctx.putImageData(new ImageData(rgba, image.width, image.height), 0, 0);
  };

  if (mode === "overlay") {
    el<HTMLCanvasElement>("xai-right").style.display = "none";
    draw("xai-left", compositeOverlay(currentImage, currentHeatmapRgba, state.overlayAlpha));
  } else {
    el<HTMLCanvasElement>("xai-right").style.display = "inline-block";
    draw("xai-left", currentImage);
    draw("xai-right", currentHeatmapRgba);
  }
}

function downloadHeatmap() {
  if (!currentHeatmapBytes) return;
  const blob = new Blob([new Uint8Array(currentHeatmapBytes)], { type: "application/octet-stream" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = `${state.selectedLog ?? "heatmap"}_${state.xaiMethod ?? "map"}.obzt`;
  link.click();
  URL.revokeObjectURL(link.href);
}

// -- wiring -----------------------------------------------------------------

export function mount() {
  el<HTMLButtonElement>("login-button").onclick = () => void login();
  el<HTMLSelectElement>("project-select").onchange = (event) =>
    onProjectSwitch((event.target as HTMLSelectElement).value);
  el<HTMLButtonElement>("project-create").onclick = () => void createProject();
  el<HTMLButtonElement>("project-delete").onclick = () => void deleteProject();
  el<HTMLButtonElement>("token-admin").onclick = () => void showTokens();
  el<HTMLInputElement>("outlier-filter").onchange = () => void refreshExplorer();
  el<HTMLButtonElement>("export-button").onclick = () => void exportCsv();
  el<HTMLButtonElement>("explorer-prev").onclick = () => {
    explorerOffset = Math.max(0, explorerOffset - EXPLORER_LIMIT);
    void refreshExplorer();
  };
  el<HTMLButtonElement>("explorer-next").onclick = () => {
    explorerOffset += EXPLORER_LIMIT;
    void refreshExplorer();
  };
  el<HTMLInputElement>("alpha-slider").oninput = renderXai;
  el<HTMLSelectElement>("xai-mode").onchange = renderXai;
  el<HTMLButtonElement>("heatmap-download").onclick = downloadHeatmap;
  // expose the default metric count for sanity checking in the console
  (window as unknown as Record<string, unknown>).__obzDefaults = DEFAULT_METRICS;
}

if (typeof document !== "undefined" && document.getElementById("login-button")) {
  mount();
}

// referenced by tests to confirm the shell stays in sync with the summary
export { lastSummary };
