"""End-to-end pipeline driver.

For each corpus instance: build the task prompt, send it to the UIE backend,
parse the meta-response, dispatch each module invocation to the matching
grounding backend, link the returned groundings onto the records, and persist
a run record. Backends are external processes speaking newline-delimited
json over stdio or http (docs/backend-protocol.md); per-instance failures
are recorded and never abort the run.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .corpus import (
    GoldValidationError,
    Manifest,
    ManifestEntry,
    Violation,
    combo_modalities,
    grounding_ref_to_dict,
    load_gold,
    prediction_from_dict,
    prediction_to_dict,
)
from .jsonutil import canonical_dumps
from .metaresponse import (
    GroundingResult,
    ParseError,
    PromptSpec,
    build_prompt,
    link_groundings,
    parse_meta_response,
)
from .model import (
    AudioSegment,
    GroundingRef,
    ImageMask,
    Modality,
    ModelError,
    PredictionSet,
    Task,
    Tracklet,
)
from .scoring import InstanceScore, ScoreReport, ScoringOptions, aggregate, score_pair

STORE_FORMAT_VERSION = 1

BACKEND_KINDS = ("uie", "image_segmenter", "video_tracker", "audio_segmenter")

DEFAULT_MODULE_ROUTES = {
    "Image Segmenter": "image_segmenter",
    "Video Tracker": "video_tracker",
    "Audio Segmenter": "audio_segmenter",
}

KIND_MODALITY = {
    "image_segmenter": Modality.IMAGE,
    "video_tracker": Modality.VIDEO,
    "audio_segmenter": Modality.AUDIO,
}

# prompt schemas used when neither the manifest entry nor the gold file
# supplies candidate labels
FALLBACK_SCHEMAS = {
    Task.NER: ("person", "location", "organization", "miscellaneous"),
    Task.RE: ("peer", "part_of", "locate_at", "member_of"),
    Task.EE: ("Attack", "Meet", "Transport", "Marry"),
}
FALLBACK_ROLES = ("Agent", "Target", "Place", "Instrument")


class BackendError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: str
    transport: str = "stdio"
    command: tuple[str, ...] = ()
    url: str = ""
    timeout: float = 30.0
    max_inflight: int = 4

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ModelError("UNKNOWN_KIND", f"backend kind must be one of {BACKEND_KINDS}")
        if self.transport not in ("stdio", "http"):
            raise ModelError("UNKNOWN_TRANSPORT", "transport must be stdio or http")
        if self.timeout <= 0:
            raise ModelError("BAD_TIMEOUT", "timeout must be > 0")
        if self.max_inflight < 1:
            raise ModelError("BAD_INFLIGHT", "max_inflight must be >= 1")
        if self.transport == "stdio" and not self.command:
            raise ModelError("BAD_SPEC", "stdio backend requires a launch command")
        if self.transport == "http" and not self.url:
            raise ModelError("BAD_SPEC", "http backend requires a base url")

    @classmethod
    def parse(cls, kind: str, spec: str, timeout: float = 30.0, max_inflight: int = 4) -> "BackendSpec":
        """CLI form: either `http:URL` or a shell launch command."""
        if spec.startswith("http:") and "//" in spec:
            return cls(name=kind, kind=kind, transport="http", url=spec, timeout=timeout,
                       max_inflight=max_inflight)
        if spec.startswith("stdio:"):
            spec = spec[len("stdio:"):]
        return cls(name=kind, kind=kind, transport="stdio", command=tuple(shlex.split(spec)),
                   timeout=timeout, max_inflight=max_inflight)


class StdioBackend:
    """ndjson request/response client over a child process's stdin/stdout.

    Requests are correlated by id, so up to max_inflight of them may be
    pipelined; a reader thread fans responses back out.
    """

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        try:
            self.proc = subprocess.Popen(
                list(spec.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise BackendError("LAUNCH_FAILED", f"{spec.name}: {exc}")
        self._write_lock = threading.Lock()
        self._cond = threading.Condition()
        self._responses: dict[str, dict] = {}
        self._inflight = threading.Semaphore(spec.max_inflight)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                continue
            rid = obj.get("id")
            with self._cond:
                self._responses[str(rid)] = obj
                self._cond.notify_all()
        with self._cond:
            self._cond.notify_all()

    def request(self, payload: dict) -> dict:
        rid = str(payload["id"])
        with self._inflight:
            line = json.dumps(payload, ensure_ascii=False) + "\n"
            with self._write_lock:
                if self.proc.poll() is not None:
                    raise BackendError("BACKEND_EXITED", f"{self.spec.name} exited with {self.proc.returncode}")
                assert self.proc.stdin is not None
                self.proc.stdin.write(line)
                self.proc.stdin.flush()
            deadline = time.monotonic() + self.spec.timeout
            with self._cond:
                while rid not in self._responses:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise TimeoutError(f"{self.spec.name}: no response for {rid} within {self.spec.timeout}s")
                    was_dead = self.proc.poll() is not None
                    self._cond.wait(timeout=min(remaining, 0.1))
                    if was_dead and rid not in self._responses:
                        raise BackendError("BACKEND_EXITED", f"{self.spec.name} exited with {self.proc.returncode}")
                return self._responses.pop(rid)

    def close(self):
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self.proc.kill()


class HttpBackend:
    """One POST per request; the response body is the json message."""

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        self._inflight = threading.Semaphore(spec.max_inflight)

    def request(self, payload: dict) -> dict:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        req = urllib.request.Request(self.spec.url, data=body, headers={"Content-Type": "application/json"})
        with self._inflight:
            try:
                with urllib.request.urlopen(req, timeout=self.spec.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.URLError as exc:
                if isinstance(getattr(exc, "reason", None), TimeoutError) or isinstance(exc, TimeoutError):
                    raise TimeoutError(str(exc))
                raise BackendError("HTTP_ERROR", f"{self.spec.name}: {exc}")
            except TimeoutError as exc:
                raise TimeoutError(f"{self.spec.name}: {exc}")

    def close(self):
        pass


def open_backend(spec: BackendSpec):
    return StdioBackend(spec) if spec.transport == "stdio" else HttpBackend(spec)


@dataclass(frozen=True)
class RunRecord:
    """Everything one instance produced, stage by stage; append-only."""

    instance_id: str
    prompt: str = ""
    response_text: str = ""
    warnings: tuple[str, ...] = ()
    module_results: tuple[dict, ...] = ()
    prediction: PredictionSet | None = None
    error: dict | None = None
    timings: dict[str, float] = field(default_factory=dict, compare=False)

    def to_canonical_dict(self) -> dict:
        return {
            "format_version": STORE_FORMAT_VERSION,
            "instance_id": self.instance_id,
            "prompt": self.prompt,
            "response_text": self.response_text,
            "warnings": list(self.warnings),
            "module_results": list(self.module_results),
            "prediction": prediction_to_dict(self.prediction) if self.prediction else None,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(
            instance_id=data["instance_id"],
            prompt=data.get("prompt", ""),
            response_text=data.get("response_text", ""),
            warnings=tuple(data.get("warnings", ())),
            module_results=tuple(data.get("module_results", ())),
            prediction=prediction_from_dict(data["prediction"]) if data.get("prediction") else None,
            error=data.get("error"),
        )


class PredictionStore:
    """Directory of per-instance run records plus an index file.

    Canonical serialization excludes wall-clock timings (they live in
    timings.jsonl), so identical runs produce byte-identical stores.
    """

    def __init__(self, records: dict[str, RunRecord], corpus: str = ""):
        self.records = dict(records)
        self.corpus = corpus

    def write(self, out_dir: str) -> None:
        records_dir = os.path.join(out_dir, "records")
        os.makedirs(records_dir, exist_ok=True)
        index = {"format_version": STORE_FORMAT_VERSION, "corpus": self.corpus, "instances": []}
        timing_lines = []
        for iid in sorted(self.records):
            record = self.records[iid]
            with open(os.path.join(records_dir, f"{iid}.json"), "w", encoding="utf-8") as fh:
                fh.write(canonical_dumps(record.to_canonical_dict()))
            index["instances"].append(
                {"instance_id": iid, "status": record.error["code"] if record.error else "ok"}
            )
            timing_lines.append(json.dumps({"instance_id": iid, "stages": record.timings}, sort_keys=True))
        with open(os.path.join(out_dir, "index.json"), "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps(index))
        with open(os.path.join(out_dir, "timings.jsonl"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(timing_lines) + ("\n" if timing_lines else ""))

    @classmethod
    def load(cls, store_dir: str) -> "PredictionStore":
        index_path = os.path.join(store_dir, "index.json")
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
        if index.get("format_version") != STORE_FORMAT_VERSION:
            raise ModelError("BAD_FORMAT_VERSION", f"store format_version must be {STORE_FORMAT_VERSION}")
        records = {}
        for item in index["instances"]:
            iid = item["instance_id"]
            with open(os.path.join(store_dir, "records", f"{iid}.json"), "r", encoding="utf-8") as fh:
                records[iid] = RunRecord.from_dict(json.load(fh))
        return cls(records, corpus=index.get("corpus", ""))


@dataclass(frozen=True)
class RunConfig:
    jobs: int = 0  # 0 = logical cores
    retries: int = 0  # at most one retry is supported
    module_routes: dict[str, str] = field(default_factory=dict)
    scoring: ScoringOptions = ScoringOptions()

    def routes(self) -> dict[str, str]:
        return {**DEFAULT_MODULE_ROUTES, **self.module_routes}


def _entry_schema(entry: ManifestEntry) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if entry.label_schema:
        return entry.label_schema, entry.role_schema
    labels: list[str] = []
    roles: list[str] = []
    try:
        gold = load_gold(entry.gold_path, entry.bundle())
        if entry.task is Task.NER:
            labels = sorted({e.label for e in gold.entities if e.label})
        elif entry.task is Task.RE:
            labels = sorted({r.relation for r in gold.relations})
        else:
            labels = sorted({e.event_type for e in gold.events})
            roles = sorted({a.role for e in gold.events for a in e.arguments})
    except (OSError, GoldValidationError):
        pass
    return (
        tuple(labels) or FALLBACK_SCHEMAS[entry.task],
        tuple(roles) or (FALLBACK_ROLES if entry.task is Task.EE else ()),
    )


def _attachments(entry: ManifestEntry) -> list[dict]:
    out = []
    for modality, media in (("image", entry.image), ("audio", entry.audio), ("video", entry.video)):
        if media is not None:
            out.append({"modality": modality, "path": media.path})
    return out


def _source_for(entry: ManifestEntry, kind: str) -> dict:
    modality = KIND_MODALITY[kind]
    media = {Modality.IMAGE: entry.image, Modality.AUDIO: entry.audio, Modality.VIDEO: entry.video}[modality]
    return {"modality": modality.value, "path": media.path if media else ""}


def _payload_refs(kind: str, response: dict, entry: ManifestEntry) -> list[GroundingRef]:
    """Decode a grounding response into refs, using manifest media dimensions."""
    refs: list[GroundingRef] = []
    if kind == "image_segmenter":
        w, h = (entry.image.width, entry.image.height) if entry.image else (0, 0)
        for rle in response.get("masks", ()):
            refs.append(GroundingRef(Modality.IMAGE, ImageMask(w, h, rle)))
    elif kind == "audio_segmenter":
        for start, end in response.get("segments", ()):
            refs.append(GroundingRef(Modality.AUDIO, AudioSegment(float(start), float(end))))
    elif kind == "video_tracker":
        w, h = (entry.video.width, entry.video.height) if entry.video else (0, 0)
        for frames in response.get("tracklets", ()):
            refs.append(GroundingRef(
                Modality.VIDEO,
                Tracklet({int(f): ImageMask(w, h, rle) for f, rle in frames.items()}),
            ))
    return refs


def _request_with_retry(backend, payload: dict, retries: int) -> dict:
    attempt = 0
    while True:
        attempt_payload = payload if attempt == 0 else {**payload, "id": f"{payload['id']}@{attempt}"}
        try:
            return backend.request(attempt_payload)
        except (TimeoutError, BackendError):
            if attempt >= min(retries, 1):
                raise
            attempt += 1


def _run_instance(entry: ManifestEntry, backends: dict, config: RunConfig) -> RunRecord:
    iid = entry.instance_id
    timings: dict[str, float] = {}
    labels, roles = _entry_schema(entry)
    spec = PromptSpec(
        task=entry.task,
        label_schema=labels,
        modalities_present=entry.bundle().modalities(),
        role_schema=roles,
    )
    prompt = build_prompt(spec)
    if entry.text is not None:
        prompt = prompt + "\n\nInput text: " + entry.text

    t0 = time.perf_counter()
    try:
        response = _request_with_retry(
            backends["uie"],
            {"id": iid, "prompt": prompt, "attachments": _attachments(entry)},
            config.retries,
        )
    except TimeoutError as exc:
        return RunRecord(iid, prompt=prompt, error={"code": "TIMEOUT", "message": str(exc)}, timings=timings)
    except BackendError as exc:
        return RunRecord(iid, prompt=prompt, error={"code": exc.code, "message": str(exc)}, timings=timings)
    timings["uie"] = time.perf_counter() - t0
    text = response.get("text")
    if not isinstance(text, str):
        return RunRecord(iid, prompt=prompt, error={"code": "BAD_RESPONSE", "message": "response lacks text"},
                         timings=timings)

    t0 = time.perf_counter()
    try:
        meta = parse_meta_response(text, entry.task)
    except ParseError as exc:
        return RunRecord(
            iid, prompt=prompt, response_text=text,
            prediction=PredictionSet(instance_id=iid, task=entry.task),
            error={"code": "PARSE_ERROR", "message": str(exc), "byte_offset": exc.byte_offset},
            timings=timings,
        )
    timings["parse"] = time.perf_counter() - t0
    warnings = [f"{w.code}: {w.detail}" for w in meta.warnings]

    routes = config.routes()
    unknown = [c.module for c in meta.module_calls if c.module not in routes]
    module_results: list[dict] = []
    results: list[GroundingResult] = []
    error = None
    if unknown:
        # tuples still score; grounding for the instance is dropped
        error = {"code": "UNKNOWN_MODULE", "message": f"unknown module name(s): {sorted(set(unknown))}"}
    else:
        t0 = time.perf_counter()
        for ci, call in enumerate(meta.module_calls):
            kind = routes[call.module]
            backend = backends.get(kind)
            if backend is None:
                warnings.append(f"NO_BACKEND: no {kind} backend configured for module {call.module!r}")
                continue
            payload = {
                "id": f"{iid}#{ci}",
                "module": call.module,
                "instruction": call.instruction,
                "source": _source_for(entry, kind),
            }
            try:
                response = _request_with_retry(backend, payload, config.retries)
            except TimeoutError as exc:
                error = {"code": "TIMEOUT", "message": str(exc)}
                break
            except BackendError as exc:
                error = {"code": exc.code, "message": str(exc)}
                break
            try:
                refs = _payload_refs(kind, response, entry)
            except (ModelError, TypeError, ValueError) as exc:
                warnings.append(f"BAD_GROUNDING: call {ci}: {exc}")
                continue
            module_results.append({
                "call_index": ci, "module": call.module, "kind": kind,
                "payloads": [grounding_ref_to_dict(ref) for ref in refs],
            })
            results.extend(GroundingResult(call_index=ci, payload=ref) for ref in refs)
        if meta.module_calls:
            timings["grounding"] = time.perf_counter() - t0

    if error is not None and error["code"] != "UNKNOWN_MODULE":
        results = []
        module_results = []
    prediction = link_groundings(meta, results if error is None else [], iid)
    return RunRecord(
        iid,
        prompt=prompt,
        response_text=text,
        warnings=tuple(warnings),
        module_results=tuple(module_results),
        prediction=prediction,
        error=error,
        timings=timings,
    )


def run_pipeline(manifest: Manifest, backend_specs: list[BackendSpec], config: RunConfig = RunConfig(),
                 out_dir: str | None = None) -> PredictionStore:
    """Run every instance through the backends; per-instance errors are
    recorded in the store, never raised. Backend launch failures are fatal."""
    uie_specs = [s for s in backend_specs if s.kind == "uie"]
    if len(uie_specs) != 1:
        raise BackendError("BAD_BACKENDS", f"exactly one uie backend required, got {len(uie_specs)}")
    by_kind: dict[str, BackendSpec] = {}
    for s in backend_specs:
        if s.kind in by_kind:
            raise BackendError("BAD_BACKENDS", f"duplicate backend kind {s.kind}")
        by_kind[s.kind] = s

    backends = {kind: open_backend(spec) for kind, spec in by_kind.items()}
    try:
        jobs = config.jobs or (os.cpu_count() or 1)
        records: dict[str, RunRecord] = {}

        def safe_run(entry: ManifestEntry) -> RunRecord:
            try:
                return _run_instance(entry, backends, config)
            except Exception as exc:  # fault isolation: nothing aborts the run
                return RunRecord(entry.instance_id,
                                 error={"code": "INTERNAL", "message": f"{type(exc).__name__}: {exc}"})

        if jobs <= 1:
            for entry in manifest.entries:
                records[entry.instance_id] = safe_run(entry)
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for record in pool.map(safe_run, manifest.entries):
                    records[record.instance_id] = record
    finally:
        for backend in backends.values():
            backend.close()

    store = PredictionStore(records, corpus=manifest.corpus)
    if out_dir:
        store.write(out_dir)
    return store


def score_store(
    store: PredictionStore,
    manifest: Manifest,
    splits: tuple[str, ...] = ("all",),
    options: ScoringOptions = ScoringOptions(),
    jobs: int = 0,
) -> tuple[ScoreReport, list[Violation]]:
    """Join stored predictions to gold by instance id and score everything
    applicable to each instance's task and modality combination.

    Per-instance scoring is embarrassingly parallel; aggregation is an
    order-independent reduction, so the result is identical for any jobs."""
    violations: list[Violation] = []
    known = {e.instance_id for e in manifest.entries}
    for iid in sorted(store.records):
        if iid not in known:
            violations.append(Violation(iid, "MISSING_GOLD", "prediction has no manifest entry"))

    def score_entry(entry: ManifestEntry):
        try:
            gold = load_gold(entry.gold_path, entry.bundle())
        except GoldValidationError as exc:
            return None, exc.violations
        except OSError as exc:
            return None, [Violation(entry.instance_id, "MISSING_FILE", str(exc), entry.gold_path)]
        found: list[Violation] = []
        record = store.records.get(entry.instance_id)
        prediction = record.prediction if record and record.prediction else PredictionSet(
            instance_id=entry.instance_id, task=entry.task
        )
        if record is not None and record.error is not None:
            found.append(Violation(entry.instance_id, record.error["code"],
                                   record.error.get("message", ""), None))
        prf, grounding = score_pair(gold, prediction, combo_modalities(entry.modality_combo), options)
        score = InstanceScore(
            instance_id=entry.instance_id,
            dataset=entry.dataset,
            modality_combo=entry.modality_combo,
            task=entry.task,
            alignment=entry.alignment,
            gold_tuple_count=gold.tuple_count(),
            prf=prf,
            grounding=grounding,
        )
        return score, found

    jobs = jobs or (os.cpu_count() or 1)
    if jobs <= 1 or len(manifest.entries) <= 1:
        results = [score_entry(e) for e in manifest.entries]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score_entry, manifest.entries))

    instances: list[InstanceScore] = []
    for score, found in results:
        violations.extend(found)
        if score is not None:
            instances.append(score)
    return aggregate(instances, splits, options), sorted(violations)
