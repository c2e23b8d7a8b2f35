/**
 * Model generation through the primary package's CLI: fits a quantized
 * ensemble on synthetic data and emits C sources plus golden vectors.
 * This package never touches the primary's internals, only its command
 * line and file formats.
 */
import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

const FLATFOREST = process.env.FLATFOREST_BIN ?? "flatforest";

export interface ModelSpec {
  id: string;
  kind: "rf" | "gbt";
  classes: number;
  estimators: number;
  depth: number;
  inputBits: 8 | 16;
  leafBits: 8 | 16;
  mode: "static" | "dynamic";
  policy?: "agg_max" | "agg_score_margin";
  threshold?: number;
  rawScores?: boolean;
  batch: number;
  fold: boolean;
  seed: number;
  vectors: number;
}

export interface EmittedModel {
  spec: ModelSpec;
  sourceDir: string;
  vectorsFile: string;
}

function cli(args: string[], cwd: string): string {
  return execFileSync(FLATFOREST, args, { cwd, encoding: "utf-8" });
}

export function emitModel(spec: ModelSpec, workRoot: string): EmittedModel {
  const dir = path.join(workRoot, spec.id);
  fs.mkdirSync(dir, { recursive: true });
  const synth =
    spec.classes === 2
      ? `binary_imbalanced:n=420,classes=2,features=6,difficulty=0.45,minority=0.3`
      : `gaussian_blobs:n=420,classes=${spec.classes},features=6,difficulty=0.45`;
  cli(
    [
      "train",
      "--synth", synth,
      "--kind", spec.kind,
      "--estimators", String(spec.estimators),
      "--depth", String(spec.depth),
      "--input-bits", String(spec.inputBits),
      "--leaf-bits", String(spec.leafBits),
      "--seed", String(spec.seed),
      "--out", dir,
    ],
    dir,
  );
  const codegenArgs = [
    "codegen",
    "--model", path.join(dir, "model.json"),
    "--mode", spec.mode,
    "--batch", String(spec.batch),
    "--vectors", String(spec.vectors),
    "--seed", String(spec.seed + 1),
    "--out", dir,
  ];
  if (spec.fold) {
    codegenArgs.push("--fold");
  }
  if (spec.mode === "dynamic") {
    codegenArgs.push("--policy", spec.policy ?? "agg_score_margin");
    codegenArgs.push("--threshold", String(spec.threshold ?? 0.8));
    if (spec.rawScores) {
      codegenArgs.push("--raw-scores");
    }
  }
  cli(codegenArgs, dir);
  return { spec, sourceDir: dir, vectorsFile: path.join(dir, "golden.csv") };
}

/** Deterministic 32-bit PRNG so the random model pool is reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function pick<T>(rand: () => number, options: readonly T[]): T {
  return options[Math.floor(rand() * options.length)];
}

export function randomModelPool(count: number, seed = 1234): ModelSpec[] {
  const rand = mulberry32(seed);
  const specs: ModelSpec[] = [];
  for (let i = 0; i < count; i++) {
    const kind = pick(rand, ["rf", "gbt"] as const);
    const classes = pick(rand, kind === "gbt" ? [2, 3] : [2, 3, 5]);
    const scalarLeaves = kind === "gbt" || classes === 2;
    const mode = pick(rand, ["static", "dynamic"] as const);
    const normalized = kind === "rf";
    const spec: ModelSpec = {
      id: `m${String(i).padStart(3, "0")}`,
      kind,
      classes,
      estimators: 2 + Math.floor(rand() * 8),
      depth: 2 + Math.floor(rand() * 4),
      inputBits: pick(rand, [8, 16] as const),
      leafBits: pick(rand, [8, 16] as const),
      mode,
      batch: pick(rand, [1, 2, 4] as const),
      fold: scalarLeaves && rand() < 0.5,
      seed: 100 + i,
      vectors: 20,
    };
    if (mode === "dynamic") {
      spec.policy = pick(rand, ["agg_max", "agg_score_margin"] as const);
      // normalized RF thresholds live in [0,1]; raw sums/logits need wider grids
      if (normalized) {
        spec.threshold = 0.5 + rand() * 0.5;
      } else {
        spec.rawScores = true;
        spec.threshold = Math.floor(rand() * 2000);
      }
    }
    specs.push(spec);
  }
  return specs;
}
