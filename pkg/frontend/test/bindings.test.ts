import { execFileSync } from "node:child_process";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { createBindings, MuieError, type RleMask } from "../src/index.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = join(here, "..", "..", "tests", "fixtures");

const cli = process.env.MUIE_CLI ? process.env.MUIE_CLI.split(/\s+/) : ["muie"];
const api = createBindings({ cliCommand: cli });

function runCli(args: string[], input: string): string {
  const [bin, ...base] = cli;
  return execFileSync(bin, [...base, ...args], { input, encoding: "utf-8" });
}

function fixture(name: string): any {
  return JSON.parse(readFileSync(join(fixtures, name), "utf-8"));
}

const BOX = readFileSync(join(fixtures, "box.txt"), "utf-8");

describe("parity with the CLI on shared fixtures", () => {
  it("parse output is bit-exact against the parse subcommand", () => {
    const viaBinding = api.invokeRaw("parse_meta_response", { text: BOX, task: "NER" });
    const viaCli = runCli(["parse", "-", "--task", "NER"], BOX);
    expect(viaBinding).toBe(viaCli);
  });

  it("score_ner matches the api subcommand byte for byte", () => {
    const request = fixture("api_score_ner.json");
    const viaBinding = api.invokeRaw("score_ner", request);
    const viaCli = runCli(["api", "score_ner"], JSON.stringify(request));
    expect(viaBinding).toBe(viaCli);
  });

  it("mask_iou matches the api subcommand byte for byte", () => {
    const request = fixture("api_mask_iou.json");
    expect(api.invokeRaw("mask_iou", request)).toBe(
      runCli(["api", "mask_iou"], JSON.stringify(request)),
    );
  });

  it("match_mask_sets matches the api subcommand byte for byte", () => {
    const request = fixture("api_match_mask_sets.json");
    expect(api.invokeRaw("match_mask_sets", request)).toBe(
      runCli(["api", "match_mask_sets"], JSON.stringify(request)),
    );
  });

  it("render_report matches the api subcommand byte for byte", () => {
    const request = fixture("api_render_report.json");
    expect(api.invokeRaw("render_report", request)).toBe(
      runCli(["api", "render_report"], JSON.stringify(request)),
    );
  });
});

describe("typed results", () => {
  it("parses the meta-response box", () => {
    const meta = api.parseMetaResponse(BOX, "NER");
    expect(meta.entities.map((e) => e.surface)).toEqual(["Trump", "Merkel"]);
    expect(meta.module_calls).toEqual([
      { module: "Image Segmenter", instruction: "Segmentation: 'A person'" },
    ]);
  });

  it("scores the two-entity fixture at F1 = 2/3", () => {
    const { gold, pred } = fixture("api_score_ner.json");
    const prf = api.scoreNer(gold, pred);
    expect(prf.tp).toBe(1);
    expect(prf.fn).toBe(1);
    expect(prf.f1).toBeCloseTo(2 / 3, 9);
  });

  it("computes the 2x2 mask IoU fixture at 1/3", () => {
    const { a, b } = fixture("api_mask_iou.json");
    expect(api.maskIou(a, b)).toBeCloseTo(1 / 3, 9);
  });

  it("scores event triggers and arguments", () => {
    const gold = [
      { trigger: "bombed", event_type: "Attack", arguments: [{ mention: "market", role: "Target" }] },
    ];
    expect(api.scoreEventTrigger(gold, gold).f1).toBe(1);
    expect(api.scoreEventArgument(gold, []).f1).toBe(0);
  });

  it("scores audio spans", () => {
    const score = api.scoreAudioSegmentation([{ start: 0, end: 10 }], [{ start: 5, end: 15 }]);
    expect(score.value).toBeCloseTo(1 / 3, 9);
  });

  it("scores video tracklets", () => {
    const full: RleMask = { width: 4, height: 4, rle: [0, 4, 12] };
    const half: RleMask = { width: 4, height: 4, rle: [0, 2, 14] };
    const score = api.scoreVideoTracking(
      [{ frames: { "0": full, "1": full } }],
      [{ frames: { "0": full, "1": half } }],
    );
    expect(score.value).toBeCloseTo(0.75, 9);
  });

  it("matches padded mask sets", () => {
    const { gold, pred } = fixture("api_match_mask_sets.json");
    const matching = api.matchMaskSets(gold, pred);
    const real = matching.pairs.filter((p) => p.gold !== null && p.pred !== null);
    expect(real).toHaveLength(1);
    expect(real[0].gold).toBe(0);
    const padded = matching.pairs.filter((p) => p.pred === null);
    expect(padded.map((p) => p.gold)).toEqual([1]);
  });

  it("renders the synthetic benchmark row exactly", () => {
    const { report } = fixture("api_render_report.json");
    const table = api.renderReport(report, "table");
    for (const value of ["47.4", "53.5", "24.6", "56.9", "30.2", "25.6", "60.1"]) {
      expect(table).toContain(value);
    }
  });
});

describe("boundary conversion", () => {
  it("dense boolean masks convert to the same RLE the toolkit produces", () => {
    const asRle: RleMask = { width: 2, height: 2, rle: [0, 2, 2] };
    const asBits = { width: 2, height: 2, bits: [true, true, false, false] };
    expect(api.maskIou(asBits, asRle)).toBe(1);
  });

  it("inputs are copied, never aliased", () => {
    const rle = [0, 2, 2];
    const mask: RleMask = { width: 2, height: 2, rle };
    api.maskIou(mask, mask);
    expect(rle).toEqual([0, 2, 2]);
  });
});

describe("error propagation", () => {
  it("surfaces the toolkit's error codes", () => {
    const bad: RleMask = { width: 2, height: 2, rle: [3] };
    const good: RleMask = { width: 2, height: 2, rle: [4] };
    try {
      api.maskIou(bad, good);
      expect.unreachable("should have thrown");
    } catch (err) {
      expect(err).toBeInstanceOf(MuieError);
      expect((err as MuieError).code).toBe("RLE_SUM_MISMATCH");
    }
  });

  it("surfaces parse errors with byte offsets", () => {
    try {
      api.parseMetaResponse("no structured content", "NER");
      expect.unreachable("should have thrown");
    } catch (err) {
      expect((err as MuieError).code).toBe("MISSING_UIE");
      expect((err as MuieError).byteOffset).toBe(0);
    }
  });
});
