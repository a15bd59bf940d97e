import { readFileSync } from "node:fs";
import { dirname, resolve } from "node:path";
import { fileURLToPath } from "node:url";

import { ApiClient } from "../src/api.js";

export interface FixtureInfo {
  url: string;
  token: string;
  project_id: string;
  user: string;
  total_samples: number;
  outlier_count: number;
  heatmap_log_id: string;
  heatmap_method: string;
  heatmap_sha256: string;
  outlier_files: string[];
  data_root: string;
}

export function loadFixture(): FixtureInfo {
  const path = resolve(dirname(fileURLToPath(import.meta.url)), ".fixture.json");
  return JSON.parse(readFileSync(path, "utf-8")) as FixtureInfo;
}

export function fixtureClient(info: FixtureInfo): ApiClient {
  return new ApiClient(info.url, info.token);
}
