"""Operator command surface.

Subcommands: validate, parse, run, score, report, api. Machine output goes
to stdout, diagnostics to stderr. Exit codes: 0 ok, 1 fatal config,
2 input-format error, 3 partial (some instances failed, report still
emitted). Documented in docs/cli.md.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import corpus as corpus_io
from .corpus import (
    CorpusError,
    GoldValidationError,
    load_manifest,
    prediction_from_dict,
    validate_corpus,
)
from .figures import render_figures
from .harness import (
    BackendError,
    BackendSpec,
    PredictionStore,
    RunConfig,
    RunRecord,
    run_pipeline,
    score_store,
)
from .jsonutil import canonical_bytes, canonical_dumps
from .metaresponse import ParseError, meta_response_to_dict, parse_meta_response
from .model import ModelError, Task
from .scoring import (
    ScoringOptions,
    load_report,
    render_report,
    report_to_dict,
    score_audio_segmentation,
    score_event_argument,
    score_event_trigger,
    score_image_grounding,
    score_ner,
    score_re,
    score_video_tracking,
)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_INPUT = 2
EXIT_PARTIAL = 3


def _err(message: str) -> None:
    print(message, file=sys.stderr)


def load_config(path: str) -> dict:
    """Flat key = value config; quoted strings, ints, floats, booleans."""
    config: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CorpusError("BAD_CONFIG", f"expected key = value, got {line!r}", line_no)
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if value.startswith('"') and value.endswith('"') and len(value) >= 2:
                config[key] = value[1:-1]
            elif value in ("true", "false"):
                config[key] = value == "true"
            else:
                try:
                    config[key] = int(value)
                except ValueError:
                    try:
                        config[key] = float(value)
                    except ValueError:
                        config[key] = value
    return config


def _effective(args, config: dict, key: str, default):
    value = getattr(args, key.replace(".", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _write_output(data: bytes, out: str | None) -> None:
    if out and out != "-":
        with open(out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


def cmd_validate(args, config) -> int:
    try:
        manifest = load_manifest(args.manifest, check_files=False)
    except (OSError, CorpusError) as exc:
        _err(json.dumps({"error": {"code": getattr(exc, "code", "IO_ERROR"), "message": str(exc)}}))
        return EXIT_INPUT
    for warning in manifest.warnings:
        _err(json.dumps({"warning": warning}))
    result = validate_corpus(manifest)
    for violation in result.violations:
        _err(json.dumps(violation.to_dict(), sort_keys=True))
    _err(json.dumps({"info": "alignment partition", "partition": result.partition}, sort_keys=True))
    return EXIT_OK if result.clean else EXIT_INPUT


def cmd_parse(args, config) -> int:
    if args.file == "-":
        text = sys.stdin.buffer.read().decode("utf-8", errors="replace")
    else:
        try:
            with open(args.file, "rb") as fh:
                text = fh.read().decode("utf-8", errors="replace")
        except OSError as exc:
            _err(str(exc))
            return EXIT_INPUT
    try:
        task = Task(args.task)
    except ValueError:
        _err(f"unknown task {args.task!r}; expected NER|RE|EE")
        return EXIT_FATAL
    try:
        meta = parse_meta_response(text, task)
    except ParseError as exc:
        _err(json.dumps({"error": {"code": exc.code, "message": str(exc), "byte_offset": exc.byte_offset}}))
        return EXIT_INPUT
    _write_output(canonical_bytes(meta_response_to_dict(meta)), args.out)
    return EXIT_OK


def _parse_backend_args(pairs: list[str], timeout: float, max_inflight: int) -> list[BackendSpec]:
    specs = []
    for pair in pairs:
        if "=" not in pair:
            raise ModelError("BAD_SPEC", f"--backend expects kind=spec, got {pair!r}")
        kind, _, spec = pair.partition("=")
        specs.append(BackendSpec.parse(kind.strip(), spec.strip(), timeout=timeout, max_inflight=max_inflight))
    return specs


def _config_backends(config: dict, timeout: float, max_inflight: int) -> list[BackendSpec]:
    specs = []
    for key, value in config.items():
        if key.startswith("backend.") and isinstance(value, str):
            specs.append(BackendSpec.parse(key[len("backend."):], value, timeout=timeout,
                                           max_inflight=max_inflight))
    return specs


def _routes(args, config) -> dict[str, str]:
    routes = {k[len("route."):]: str(v) for k, v in config.items() if k.startswith("route.")}
    for pair in getattr(args, "route", None) or []:
        if "=" not in pair:
            raise ModelError("BAD_SPEC", f"--route expects MODULE=kind, got {pair!r}")
        module, _, kind = pair.partition("=")
        routes[module.strip()] = kind.strip()
    return routes


def cmd_run(args, config) -> int:
    timeout = float(_effective(args, config, "timeout", 30.0))
    max_inflight = int(_effective(args, config, "max_inflight", 4))
    jobs = int(_effective(args, config, "jobs", 0))
    retries = int(_effective(args, config, "retries", 0))
    try:
        manifest = load_manifest(args.manifest)
    except (OSError, CorpusError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        specs = _parse_backend_args(args.backend or [], timeout, max_inflight)
        seen = {s.kind for s in specs}
        specs += [s for s in _config_backends(config, timeout, max_inflight) if s.kind not in seen]
        run_config = RunConfig(jobs=jobs, retries=retries, module_routes=_routes(args, config))
        store = run_pipeline(manifest, specs, run_config, out_dir=args.out)
    except (ModelError, BackendError) as exc:
        _err(str(exc))
        return EXIT_FATAL
    failed = sorted(iid for iid, r in store.records.items() if r.error is not None)
    for iid in failed:
        _err(json.dumps({"instance_id": iid, "error": store.records[iid].error}, sort_keys=True))
    _err(f"ran {len(store.records)} instances, {len(failed)} failed, store at {args.out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _scoring_options(args, config) -> ScoringOptions:
    return ScoringOptions(
        case_insensitive=bool(_effective(args, config, "case_insensitive", False)),
        strict_re=bool(_effective(args, config, "strict_re", False)),
        bce_epsilon=float(_effective(args, config, "bce_epsilon", 1e-6)),
        exclude_vacuous=bool(_effective(args, config, "exclude_vacuous", False)),
    )


def _load_pred_dir(pred_dir: str) -> PredictionStore:
    records = {}
    for name in sorted(os.listdir(pred_dir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(pred_dir, name), "r", encoding="utf-8") as fh:
            pred = prediction_from_dict(json.load(fh))
        records[pred.instance_id] = RunRecord(instance_id=pred.instance_id, prediction=pred)
    return PredictionStore(records)


def cmd_score(args, config) -> int:
    fmt = str(_effective(args, config, "format", "table"))
    splits = tuple(str(_effective(args, config, "split", "all")).split(","))
    try:
        manifest = load_manifest(args.manifest, check_files=False)
    except (OSError, CorpusError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        if args.pred:
            store = _load_pred_dir(args.pred)
        elif args.store:
            store = PredictionStore.load(args.store)
        else:
            _err("score requires --store or --pred")
            return EXIT_FATAL
    except (OSError, json.JSONDecodeError, ModelError, GoldValidationError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    jobs = int(_effective(args, config, "jobs", 0))
    try:
        report, violations = score_store(store, manifest, splits=splits,
                                         options=_scoring_options(args, config), jobs=jobs)
        rendered = render_report(report, fmt)
    except ModelError as exc:
        _err(str(exc))
        return EXIT_FATAL
    for violation in violations:
        _err(json.dumps(violation.to_dict(), sort_keys=True))
    _write_output(rendered, args.out)
    figures_dir = _effective(args, config, "figures", None)
    if figures_dir:
        for path in render_figures(report, str(figures_dir)):
            _err(f"figure: {path}")
    return EXIT_PARTIAL if violations else EXIT_OK


def cmd_report(args, config) -> int:
    fmt = str(_effective(args, config, "format", "table"))
    try:
        with open(args.input, "rb") as fh:
            report = load_report(fh.read())
    except (OSError, json.JSONDecodeError, ModelError, KeyError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        rendered = render_report(report, fmt)
    except ModelError as exc:
        _err(str(exc))
        return EXIT_FATAL
    _write_output(rendered, args.out)
    figures_dir = _effective(args, config, "figures", None)
    if figures_dir:
        for path in render_figures(report, str(figures_dir)):
            _err(f"figure: {path}")
    return EXIT_OK


# --- api: one json request on stdin, canonical json result on stdout -----

def _segments_from(items) -> list:
    out = []
    for item in items:
        if isinstance(item, dict):
            out.append(corpus_io.segment_from_dict(item))
        else:
            start, end = item
            out.append(corpus_io.segment_from_dict({"start": start, "end": end}))
    return out


def _prf_dict(prf) -> dict:
    return {
        "tp": prf.tp, "fp": prf.fp, "fn": prf.fn,
        "precision": prf.precision, "recall": prf.recall, "f1": prf.f1,
    }


def _grounding_dict(score) -> dict:
    return {
        "kind": score.kind, "value": score.value, "matched_pairs": score.matched_pairs,
        "unmatched_gold": score.unmatched_gold, "unmatched_pred": score.unmatched_pred,
        "vacuous": score.vacuous,
    }


def _api_dispatch(op: str, req: dict) -> dict:
    ci = bool(req.get("case_insensitive", False))
    if op == "parse_meta_response":
        meta = parse_meta_response(req["text"], Task(req.get("task", "NER")))
        return meta_response_to_dict(meta)
    if op == "score_ner":
        gold = [corpus_io.mention_from_dict(o) for o in req["gold"]]
        pred = [corpus_io.mention_from_dict(o) for o in req["pred"]]
        return _prf_dict(score_ner(gold, pred, ci))
    if op == "score_re":
        gold = [corpus_io.triple_from_dict(o) for o in req["gold"]]
        pred = [corpus_io.triple_from_dict(o) for o in req["pred"]]
        return _prf_dict(score_re(gold, pred, bool(req.get("strict", False)), ci))
    if op == "score_event_trigger":
        gold = [corpus_io.event_from_dict(o) for o in req["gold"]]
        pred = [corpus_io.event_from_dict(o) for o in req["pred"]]
        return _prf_dict(score_event_trigger(gold, pred, ci))
    if op == "score_event_argument":
        gold = [corpus_io.event_from_dict(o) for o in req["gold"]]
        pred = [corpus_io.event_from_dict(o) for o in req["pred"]]
        return _prf_dict(score_event_argument(gold, pred, ci))
    if op == "score_image_grounding":
        gold = [corpus_io.mask_from_dict(o) for o in req["gold"]]
        pred = [corpus_io.mask_from_dict(o) for o in req["pred"]]
        return _grounding_dict(score_image_grounding(gold, pred, float(req.get("epsilon", 1e-6))))
    if op == "score_video_tracking":
        gold = [corpus_io.tracklet_from_dict(o) for o in req["gold"]]
        pred = [corpus_io.tracklet_from_dict(o) for o in req["pred"]]
        return _grounding_dict(score_video_tracking(gold, pred))
    if op == "score_audio_segmentation":
        return _grounding_dict(score_audio_segmentation(_segments_from(req["gold"]), _segments_from(req["pred"])))
    if op == "mask_iou":
        from .geometry import mask_iou, rle_decode
        value = mask_iou(rle_decode(corpus_io.mask_from_dict(req["a"])), rle_decode(corpus_io.mask_from_dict(req["b"])))
        return {"value": value}
    if op == "match_mask_sets":
        from .assignment import match_mask_sets
        from .geometry import rle_decode
        gold = [rle_decode(corpus_io.mask_from_dict(o)) for o in req["gold"]]
        pred = [rle_decode(corpus_io.mask_from_dict(o)) for o in req["pred"]]
        matching = match_mask_sets(gold, pred, float(req.get("epsilon", 1e-6)))
        return {
            "pairs": [{"gold": p.gold, "pred": p.pred, "cost": p.cost} for p in matching.pairs],
            "total_cost": matching.total_cost,
        }
    if op == "render_report":
        from .scoring import report_from_dict
        rendered = render_report(report_from_dict(req["report"]), req.get("format", "table"))
        return {"output": rendered.decode("utf-8")}
    raise ModelError("UNKNOWN_OPERATION", f"api operation {op!r} not supported")


def cmd_api(args, config) -> int:
    try:
        req = json.loads(sys.stdin.buffer.read().decode("utf-8"))
    except json.JSONDecodeError as exc:
        _err(json.dumps({"error": {"code": "PARSE_ERROR", "message": str(exc)}}))
        return EXIT_INPUT
    try:
        result = _api_dispatch(args.operation, req)
    except ParseError as exc:
        _err(json.dumps({"error": {"code": exc.code, "message": str(exc), "byte_offset": exc.byte_offset}}))
        return EXIT_INPUT
    except (ModelError, GoldValidationError, KeyError, TypeError, ValueError) as exc:
        code = getattr(exc, "code", "INVALID_ARGUMENT")
        _err(json.dumps({"error": {"code": code, "message": str(exc)}}))
        return EXIT_INPUT
    sys.stdout.write(canonical_dumps(result))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="muie", description="Grounded multimodal IE toolkit")
    parser.add_argument("--config", default=None, help="key = value config file; flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a corpus manifest and its gold files")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("parse", help="parse a meta-response file (or - for stdin)")
    p.add_argument("file")
    p.add_argument("--task", required=True, help="NER|RE|EE")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("run", help="run the pipeline against backends")
    p.add_argument("--manifest", required=True)
    p.add_argument("--backend", action="append", default=None, metavar="KIND=SPEC",
                   help="kind in uie|image_segmenter|video_tracker|audio_segmenter; spec is a command or http:URL")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-inflight", dest="max_inflight", type=int, default=None)
    p.add_argument("--retries", type=int, default=None)
    p.add_argument("--route", action="append", default=None, metavar="MODULE=KIND")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="score a prediction store against gold")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", default=None)
    p.add_argument("--pred", default=None, help="directory of prediction json files (no live run)")
    p.add_argument("--split", default=None, help="comma list: all,shared,specific,entity-buckets")
    p.add_argument("--format", default=None, choices=["table", "csv", "json"])
    p.add_argument("--out", default=None)
    p.add_argument("--figures", default=None, help="directory for figure PNGs")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--case-insensitive", dest="case_insensitive", action="store_true", default=None)
    p.add_argument("--strict-re", dest="strict_re", action="store_true", default=None)
    p.add_argument("--exclude-vacuous", dest="exclude_vacuous", action="store_true", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="re-render a saved report.json")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", default=None, choices=["table", "csv", "json"])
    p.add_argument("--out", default=None)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("api", help="run one operation: json request on stdin, canonical json on stdout")
    p.add_argument("operation")
    p.set_defaults(func=cmd_api)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config: dict = {}
    if args.config:
        try:
            config = load_config(args.config)
        except (OSError, CorpusError) as exc:
            _err(str(exc))
            return EXIT_FATAL
    try:
        return args.func(args, config)
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
