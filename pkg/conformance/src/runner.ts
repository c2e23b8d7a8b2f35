/**
 * Conformance runner: compiles emitted inference sources together with the
 * replay driver at full warning strictness, executes the golden vectors and
 * compares class and trees-executed outputs exactly.
 */
import { execFileSync, spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const HERE = path.dirname(fileURLToPath(import.meta.url));
export const DRIVER_C = path.resolve(HERE, "..", "driver", "driver.c");

const CC = process.env.CC ?? "cc";
const CFLAGS = ["-std=c11", "-Wall", "-Wextra", "-Werror", "-O2"];

export interface VectorResult {
  index: number;
  pass: boolean;
  gotClass: number;
  gotTrees: number;
  expectedClass: number;
  expectedTrees: number;
}

export interface ConformanceRun {
  modelId: string;
  vectorFile: string;
  compiled: boolean;
  compileDiagnostics: string;
  vectors: VectorResult[];
  vacuous: boolean;
  passed: boolean;
  summary: string;
}

const VECTOR_LINE =
  /^vector (\d+): (pass|FAIL) class=(-?\d+) trees=(-?\d+) expected_class=(-?\d+) expected_trees=(-?\d+)$/;

export function compileModel(sourceDir: string, outBinary: string): string {
  const args = [
    ...CFLAGS,
    "-I",
    sourceDir,
    path.join(sourceDir, "inference.c"),
    DRIVER_C,
    "-o",
    outBinary,
  ];
  const res = spawnSync(CC, args, { encoding: "utf-8" });
  const diagnostics = `${res.stdout ?? ""}${res.stderr ?? ""}`;
  if (res.status !== 0) {
    throw new CompileError(diagnostics || `compiler exited with ${res.status}`);
  }
  // -Werror already rejects warnings; any stderr chatter is still a failure
  if (diagnostics.trim().length > 0) {
    throw new CompileError(`compiler was not silent:\n${diagnostics}`);
  }
  return diagnostics;
}

export class CompileError extends Error {}

export function runConformance(sourceDir: string, vectorsFile: string, modelId?: string): ConformanceRun {
  const id = modelId ?? path.basename(sourceDir);
  const workDir = fs.mkdtempSync(path.join(os.tmpdir(), "conformance-"));
  const binary = path.join(workDir, "replay");
  const base: ConformanceRun = {
    modelId: id,
    vectorFile: vectorsFile,
    compiled: false,
    compileDiagnostics: "",
    vectors: [],
    vacuous: false,
    passed: false,
    summary: "",
  };
  try {
    try {
      base.compileDiagnostics = compileModel(sourceDir, binary);
      base.compiled = true;
    } catch (err) {
      if (err instanceof CompileError) {
        base.compileDiagnostics = err.message;
        base.summary = "compile failed";
        return base;
      }
      throw err;
    }
    const res = spawnSync(binary, [vectorsFile], { encoding: "utf-8" });
    const lines = (res.stdout ?? "").trim().split("\n").filter((l) => l.length > 0);
    for (const line of lines) {
      const m = VECTOR_LINE.exec(line);
      if (m) {
        base.vectors.push({
          index: Number(m[1]),
          pass: m[2] === "pass",
          gotClass: Number(m[3]),
          gotTrees: Number(m[4]),
          expectedClass: Number(m[5]),
          expectedTrees: Number(m[6]),
        });
      } else if (line.startsWith("vacuous")) {
        base.vacuous = true;
      } else if (line.startsWith("summary:")) {
        base.summary = line.slice("summary:".length).trim();
      }
    }
    if (base.vacuous) {
      base.summary = "vacuous pass (0 vectors)";
      base.passed = res.status === 0;
    } else {
      const failing = base.vectors.filter((v) => !v.pass);
      base.passed = res.status === 0 && failing.length === 0 && base.vectors.length > 0;
      if (!base.summary) {
        base.summary = `${base.vectors.length - failing.length}/${base.vectors.length} pass`;
      }
    }
    return base;
  } finally {
    fs.rmSync(workDir, { recursive: true, force: true });
  }
}
