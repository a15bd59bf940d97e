// Spawns a seeded backend (scripts/seed_demo.py) before the suite and tears
// it down afterwards. Connection details land in test/.fixture.json.

import { spawn, type ChildProcess } from "node:child_process";
import { writeFileSync, rmSync } from "node:fs";
import { dirname, resolve } from "node:path";
import { fileURLToPath } from "node:url";

const testDir = dirname(fileURLToPath(import.meta.url));
const repoRoot = resolve(testDir, "..", "..");
export const fixturePath = resolve(testDir, ".fixture.json");

let child: ChildProcess | null = null;

export default async function setup(): Promise<() => void> {
  child = spawn("python3", [resolve(repoRoot, "scripts", "seed_demo.py")], {
    cwd: repoRoot,
    stdio: ["ignore", "pipe", "pipe"],
  });

  const stderrChunks: string[] = [];
  child.stderr!.on("data", (chunk) => stderrChunks.push(String(chunk)));

  const infoLine: string = await new Promise((resolvePromise, rejectPromise) => {
    let buffer = "";
    const timer = setTimeout(
      () => rejectPromise(new Error(`seed_demo.py produced no fixture line\n${stderrChunks.join("")}`)),
      150_000,
    );
    child!.stdout!.on("data", (chunk) => {
      buffer += String(chunk);
      const newline = buffer.indexOf("\n");
      if (newline >= 0) {
        clearTimeout(timer);
        resolvePromise(buffer.slice(0, newline));
      }
    });
    child!.on("exit", (code) =>
      rejectPromise(new Error(`seed_demo.py exited early (${code})\n${stderrChunks.join("")}`)),
    );
  });

  JSON.parse(infoLine); // fail fast on malformed output
  writeFileSync(fixturePath, infoLine);

  return () => {
    child?.kill("SIGTERM");
    rmSync(fixturePath, { force: true });
  };
}
