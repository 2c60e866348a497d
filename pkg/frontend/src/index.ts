// Bindings for the muie-toolkit: every call shells out to the `muie api`
// surface (one json request on stdin, canonical json on stdout), so bound
// results are produced by the exact same implementation the CLI uses.

import { spawnSync } from "node:child_process";

export type Task = "NER" | "RE" | "EE";
export type ReportFormat = "table" | "csv" | "json";

export interface Prf {
  tp: number;
  fp: number;
  fn: number;
  precision: number;
  recall: number;
  f1: number;
}

export interface GroundingScore {
  kind: string;
  value: number;
  matched_pairs: number;
  unmatched_gold: number;
  unmatched_pred: number;
  vacuous: boolean;
}

export interface Mention {
  surface: string;
  label: string;
}

export interface RelationTriple {
  subject: Mention;
  relation: string;
  object: Mention;
}

export interface EventArgument {
  mention: string;
  role: string;
}

export interface EventRecord {
  trigger: string;
  event_type: string;
  arguments?: EventArgument[];
}

export interface RleMask {
  width: number;
  height: number;
  rle: number[];
}

/** Dense row-major boolean form; converted to RLE at the boundary. */
export interface DenseMask {
  width: number;
  height: number;
  bits: boolean[];
}

export type MaskInput = RleMask | DenseMask;

export interface AudioSpan {
  start: number;
  end: number;
}

export interface TrackletInput {
  frames: Record<string, MaskInput>;
}

export interface MetaResponse {
  task: Task;
  entities: { surface: string; label: string; concept: boolean }[];
  relations: {
    subject: string;
    relation: string;
    object: string;
    subject_concept: boolean;
    object_concept: boolean;
  }[];
  events: {
    trigger: string;
    event_type: string;
    trigger_concept: boolean;
    arguments: { role: string; mention: string; concept: boolean }[];
  }[];
  module_calls: { module: string; instruction: string }[];
  warnings: { code: string; detail: string }[];
}

export interface MatchedPair {
  gold: number | null;
  pred: number | null;
  cost: number;
}

export interface Matching {
  pairs: MatchedPair[];
  total_cost: number;
}

export interface ReportCellInput {
  dataset: string;
  modality_combo: string;
  task: Task;
  metric: string;
  split: string;
  value: number;
  instances: number;
  instance_ids: string[];
  counts?: { tp: number; fp: number; fn: number };
}

export interface Report {
  format_version: 1;
  cells: ReportCellInput[];
}

export interface ScoreOptions {
  caseInsensitive?: boolean;
  strict?: boolean;
}

/** Typed failure carrying the toolkit's machine-readable error code. */
export class MuieError extends Error {
  readonly code: string;
  readonly byteOffset?: number;

  constructor(code: string, message: string, byteOffset?: number) {
    super(`${code}: ${message}`);
    this.code = code;
    this.byteOffset = byteOffset;
  }
}

export interface BindingOptions {
  /** CLI launch vector; defaults to $MUIE_CLI (whitespace-split) or ["muie"]. */
  cliCommand?: string[];
  timeoutMs?: number;
}

function denseToRle(mask: DenseMask): RleMask {
  const { width, height, bits } = mask;
  if (bits.length !== width * height) {
    throw new MuieError(
      "BAD_DIMENSIONS",
      `bit vector length ${bits.length} != ${width}x${height}`,
    );
  }
  const rle: number[] = [];
  let current = false; // runs start with the background count
  let run = 0;
  for (const bit of bits) {
    if (bit === current) {
      run += 1;
    } else {
      rle.push(run);
      current = bit;
      run = 1;
    }
  }
  rle.push(run);
  return { width, height, rle };
}

function toRleMask(mask: MaskInput): RleMask {
  return "bits" in mask ? denseToRle(mask) : { ...mask, rle: [...mask.rle] };
}

function toTracklet(t: TrackletInput): { frames: Record<string, RleMask> } {
  const frames: Record<string, RleMask> = {};
  for (const [frame, mask] of Object.entries(t.frames)) {
    frames[frame] = toRleMask(mask);
  }
  return { frames };
}

export function createBindings(options: BindingOptions = {}) {
  const command =
    options.cliCommand ??
    (process.env.MUIE_CLI ? process.env.MUIE_CLI.split(/\s+/) : ["muie"]);
  const timeoutMs = options.timeoutMs ?? 120_000;

  function invokeRaw(operation: string, request: unknown): string {
    const [bin, ...args] = command;
    const proc = spawnSync(bin, [...args, "api", operation], {
      input: JSON.stringify(request),
      encoding: "utf-8",
      timeout: timeoutMs,
      maxBuffer: 64 * 1024 * 1024,
    });
    if (proc.error) {
      throw new MuieError("SPAWN_FAILED", `${command.join(" ")}: ${proc.error.message}`);
    }
    if (proc.status !== 0) {
      try {
        const payload = JSON.parse(proc.stderr);
        throw new MuieError(
          payload.error.code,
          payload.error.message,
          payload.error.byte_offset,
        );
      } catch (err) {
        if (err instanceof MuieError) throw err;
        throw new MuieError("CLI_FAILED", `exit ${proc.status}: ${proc.stderr}`);
      }
    }
    return proc.stdout;
  }

  function invoke<T>(operation: string, request: unknown): T {
    return JSON.parse(invokeRaw(operation, request)) as T;
  }

  return {
    /** Raw canonical json text, byte-identical to the CLI's stdout. */
    invokeRaw,

    parseMetaResponse(text: string, task: Task): MetaResponse {
      return invoke("parse_meta_response", { text, task });
    },

    scoreNer(gold: Mention[], pred: Mention[], options: ScoreOptions = {}): Prf {
      return invoke("score_ner", {
        gold,
        pred,
        case_insensitive: options.caseInsensitive ?? false,
      });
    },

    scoreRe(gold: RelationTriple[], pred: RelationTriple[], options: ScoreOptions = {}): Prf {
      return invoke("score_re", {
        gold,
        pred,
        strict: options.strict ?? false,
        case_insensitive: options.caseInsensitive ?? false,
      });
    },

    scoreEventTrigger(gold: EventRecord[], pred: EventRecord[], options: ScoreOptions = {}): Prf {
      return invoke("score_event_trigger", {
        gold,
        pred,
        case_insensitive: options.caseInsensitive ?? false,
      });
    },

    scoreEventArgument(gold: EventRecord[], pred: EventRecord[], options: ScoreOptions = {}): Prf {
      return invoke("score_event_argument", {
        gold,
        pred,
        case_insensitive: options.caseInsensitive ?? false,
      });
    },

    scoreImageGrounding(gold: MaskInput[], pred: MaskInput[], epsilon?: number): GroundingScore {
      return invoke("score_image_grounding", {
        gold: gold.map(toRleMask),
        pred: pred.map(toRleMask),
        ...(epsilon !== undefined ? { epsilon } : {}),
      });
    },

    scoreVideoTracking(gold: TrackletInput[], pred: TrackletInput[]): GroundingScore {
      return invoke("score_video_tracking", {
        gold: gold.map(toTracklet),
        pred: pred.map(toTracklet),
      });
    },

    scoreAudioSegmentation(gold: AudioSpan[], pred: AudioSpan[]): GroundingScore {
      return invoke("score_audio_segmentation", { gold, pred });
    },

    maskIou(a: MaskInput, b: MaskInput): number {
      return invoke<{ value: number }>("mask_iou", {
        a: toRleMask(a),
        b: toRleMask(b),
      }).value;
    },

    matchMaskSets(gold: MaskInput[], pred: MaskInput[], epsilon?: number): Matching {
      return invoke("match_mask_sets", {
        gold: gold.map(toRleMask),
        pred: pred.map(toRleMask),
        ...(epsilon !== undefined ? { epsilon } : {}),
      });
    },

    renderReport(report: Report, format: ReportFormat = "table"): string {
      return invoke<{ output: string }>("render_report", { report, format }).output;
    },
  };
}

export type Bindings = ReturnType<typeof createBindings>;

const defaultBindings = createBindings();

export const parseMetaResponse = defaultBindings.parseMetaResponse;
export const scoreNer = defaultBindings.scoreNer;
export const scoreRe = defaultBindings.scoreRe;
export const scoreEventTrigger = defaultBindings.scoreEventTrigger;
export const scoreEventArgument = defaultBindings.scoreEventArgument;
export const scoreImageGrounding = defaultBindings.scoreImageGrounding;
export const scoreVideoTracking = defaultBindings.scoreVideoTracking;
export const scoreAudioSegmentation = defaultBindings.scoreAudioSegmentation;
export const maskIou = defaultBindings.maskIou;
export const matchMaskSets = defaultBindings.matchMaskSets;
export const renderReport = defaultBindings.renderReport;

export default defaultBindings;
