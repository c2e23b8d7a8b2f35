import { beforeAll, describe, expect, test } from "vitest";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { emitModel, type EmittedModel } from "../src/generate.js";
import { runConformance } from "../src/runner.js";

let workRoot: string;
let stumpModel: EmittedModel;

beforeAll(() => {
  workRoot = fs.mkdtempSync(path.join(os.tmpdir(), "ff-runner-"));
  stumpModel = emitModel(
    {
      id: "stump",
      kind: "rf",
      classes: 2,
      estimators: 2,
      depth: 1,
      inputBits: 8,
      leafBits: 8,
      mode: "static",
      batch: 1,
      fold: false,
      seed: 7,
      vectors: 10,
    },
    workRoot,
  );
});

describe("runConformance", () => {
  test("valid stump model: all vectors pass", () => {
    const run = runConformance(stumpModel.sourceDir, stumpModel.vectorsFile);
    expect(run.compiled).toBe(true);
    expect(run.vectors).toHaveLength(10);
    expect(run.vectors.every((v) => v.pass)).toBe(true);
    expect(run.passed).toBe(true);
    expect(run.vacuous).toBe(false);
  });

  test("corrupted expected_class fails exactly that vector", () => {
    const corrupted = path.join(workRoot, "corrupted.csv");
    const lines = fs.readFileSync(stumpModel.vectorsFile, "utf-8").trim().split("\n");
    const cells = lines[3].split(",");
    const cls = Number(cells[cells.length - 2]);
    cells[cells.length - 2] = String(cls === 0 ? 1 : 0);
    lines[3] = cells.join(",");
    fs.writeFileSync(corrupted, lines.join("\n") + "\n");

    const run = runConformance(stumpModel.sourceDir, corrupted);
    expect(run.compiled).toBe(true);
    expect(run.passed).toBe(false);
    const failing = run.vectors.filter((v) => !v.pass);
    expect(failing).toHaveLength(1);
    expect(failing[0].index).toBe(3); // 1-based vector numbering
  });

  test("empty vectors file is a vacuous pass", () => {
    const empty = path.join(workRoot, "empty.csv");
    const header = fs.readFileSync(stumpModel.vectorsFile, "utf-8").split("\n")[0];
    fs.writeFileSync(empty, header + "\n");
    const run = runConformance(stumpModel.sourceDir, empty);
    expect(run.passed).toBe(true);
    expect(run.vacuous).toBe(true);
    expect(run.vectors).toHaveLength(0);
    expect(run.summary).toContain("vacuous");
  });

  test("compile failures are reported verbatim", () => {
    const broken = path.join(workRoot, "broken");
    fs.mkdirSync(broken, { recursive: true });
    for (const name of ["inference.h", "model_data.h"]) {
      fs.copyFileSync(path.join(stumpModel.sourceDir, name), path.join(broken, name));
    }
    const source = fs.readFileSync(path.join(stumpModel.sourceDir, "inference.c"), "utf-8");
    fs.writeFileSync(path.join(broken, "inference.c"), source + "\nint oops(void) { return undeclared; }\n");
    const run = runConformance(broken, stumpModel.vectorsFile);
    expect(run.compiled).toBe(false);
    expect(run.passed).toBe(false);
    expect(run.compileDiagnostics).toContain("undeclared");
  });

  test("folded binary model emits no LEAVES and still passes", () => {
    const folded = emitModel(
      {
        id: "folded",
        kind: "rf",
        classes: 2,
        estimators: 4,
        depth: 3,
        inputBits: 8,
        leafBits: 16,
        mode: "dynamic",
        policy: "agg_max",
        threshold: 0.85,
        batch: 2,
        fold: true,
        seed: 21,
        vectors: 15,
      },
      workRoot,
    );
    const data = fs.readFileSync(path.join(folded.sourceDir, "model_data.h"), "utf-8");
    expect(data).not.toContain("LEAVES");
    const run = runConformance(folded.sourceDir, folded.vectorsFile);
    expect(run.passed).toBe(true);
  });
});
