"""Benchmark corpus schema: json-lines manifest plus per-instance gold files.

The manifest (`muie-manifest.jsonl`) starts with a header record and carries
one instance entry per line; every instance references a gold annotation
json and its media files. Media are never decoded: the metadata needed for
scoring (dimensions, duration, frame count) lives in the manifest. Formats
are documented bit-exactly in docs/corpus-format.md; version 1 is frozen.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

from .jsonutil import canonical_dumps
from .model import (
    Alignment,
    AudioSegment,
    EntityMention,
    EventArgument,
    EventRecord,
    GoldAnnotation,
    GroundingRef,
    GroundingTarget,
    ImageMask,
    MediaRef,
    Modality,
    ModalityBundle,
    ModelError,
    PredictionSet,
    RelationTriple,
    Task,
    Tracklet,
    normalize_mention,
)

MANIFEST_FORMAT_VERSION = 1
GOLD_FORMAT_VERSION = 1

MODALITY_COMBOS = ("T+I", "T+V", "T+A", "I", "V", "A", "I+A", "T+I+A", "V+A")

_COMBO_LETTER = {"T": Modality.TEXT, "I": Modality.IMAGE, "A": Modality.AUDIO, "V": Modality.VIDEO}


def combo_modalities(combo: str) -> set[Modality]:
    return {_COMBO_LETTER[part] for part in combo.split("+")}


class CorpusError(ValueError):
    """Fatal manifest defect (parse error, duplicate id, unknown enum)."""

    def __init__(self, code: str, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{code}{where}: {message}")
        self.code = code
        self.line = line


@dataclass(frozen=True, order=True)
class Violation:
    instance_id: str
    code: str
    message: str = field(compare=False)
    path: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {"instance_id": self.instance_id, "code": self.code, "message": self.message}
        if self.path:
            out["path"] = self.path
        return out


class GoldValidationError(ValueError):
    """A gold file failed validation; carries every violation found."""

    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(f"{v.code}: {v.message}" for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class ManifestEntry:
    instance_id: str
    dataset: str
    modality_combo: str
    task: Task
    alignment: Alignment
    gold_path: str
    text: str | None = None
    image: MediaRef | None = None
    audio: MediaRef | None = None
    video: MediaRef | None = None
    label_schema: tuple[str, ...] = ()
    role_schema: tuple[str, ...] = ()
    line: int = field(default=0, compare=False)

    def bundle(self) -> ModalityBundle:
        return ModalityBundle(
            instance_id=self.instance_id,
            text=self.text,
            image=self.image,
            audio=self.audio,
            video=self.video,
            alignment=self.alignment,
        )


@dataclass(frozen=True)
class Manifest:
    corpus: str
    version: str
    entries: tuple[ManifestEntry, ...]
    path: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.instance_id: e for e in self.entries}


def _media_ref(obj: dict, base: str) -> MediaRef:
    return MediaRef(
        path=os.path.normpath(os.path.join(base, obj["path"])),
        width=int(obj.get("width", 0)),
        height=int(obj.get("height", 0)),
        duration=float(obj.get("duration", 0.0)),
        frame_count=int(obj.get("frame_count", 0)),
        fps=float(obj.get("fps", 0.0)),
    )


_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def _parse_entry(obj: dict, base: str, line: int) -> ManifestEntry:
    try:
        if not _ID_RE.match(str(obj["instance_id"])):
            raise CorpusError("BAD_ID", f"instance_id {obj['instance_id']!r} must match {_ID_RE.pattern}", line)
        combo = obj["modality_combo"]
        if combo not in MODALITY_COMBOS:
            raise CorpusError("UNKNOWN_COMBO", f"modality_combo {combo!r} not in {MODALITY_COMBOS}", line)
        try:
            task = Task(obj["task"])
        except ValueError:
            raise CorpusError("UNKNOWN_TASK", f"task {obj['task']!r} must be one of NER|RE|EE", line)
        try:
            alignment = Alignment(obj.get("alignment", "shared"))
        except ValueError:
            raise CorpusError("UNKNOWN_ALIGNMENT", f"alignment must be shared|specific", line)
        entry = ManifestEntry(
            instance_id=obj["instance_id"],
            dataset=obj.get("dataset", ""),
            modality_combo=combo,
            task=task,
            alignment=alignment,
            gold_path=os.path.normpath(os.path.join(base, obj["gold"])),
            text=obj.get("text"),
            image=_media_ref(obj["image"], base) if "image" in obj else None,
            audio=_media_ref(obj["audio"], base) if "audio" in obj else None,
            video=_media_ref(obj["video"], base) if "video" in obj else None,
            label_schema=tuple(obj.get("label_schema", ())),
            role_schema=tuple(obj.get("role_schema", ())),
            line=line,
        )
    except KeyError as exc:
        raise CorpusError("MISSING_FIELD", f"entry lacks required field {exc.args[0]!r}", line)
    declared = combo_modalities(combo)
    try:
        present = entry.bundle().modalities()  # also runs bundle invariants
    except ModelError as exc:
        raise CorpusError("BAD_MEDIA", str(exc), line)
    if declared != present:
        raise CorpusError(
            "COMBO_MEDIA_MISMATCH",
            f"combo {combo} declares {sorted(m.value for m in declared)} but entry carries "
            f"{sorted(m.value for m in present)}",
            line,
        )
    return entry


def load_manifest(path: str, check_files: bool = True) -> Manifest:
    """Load and fully validate a json-lines manifest.

    Structural defects are fatal CorpusErrors carrying the line number; an
    empty file is a valid empty manifest (with a warning attached).
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().split("\n")

    numbered = [(i + 1, line) for i, line in enumerate(raw_lines) if line.strip()]
    if not numbered:
        return Manifest(corpus="", version="", entries=(), path=path, warnings=("empty manifest",))

    def parse_json(line_no: int, text: str) -> dict:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusError("PARSE_ERROR", str(exc), line_no)
        if not isinstance(obj, dict):
            raise CorpusError("PARSE_ERROR", "each manifest line must be a json object", line_no)
        return obj

    header_no, header_text = numbered[0]
    header = parse_json(header_no, header_text)
    if header.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise CorpusError(
            "BAD_FORMAT_VERSION",
            f"header format_version must be {MANIFEST_FORMAT_VERSION}, got {header.get('format_version')!r}",
            header_no,
        )

    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    for line_no, text in numbered[1:]:
        obj = parse_json(line_no, text)
        entry = _parse_entry(obj, base, line_no)
        if entry.instance_id in seen:
            raise CorpusError(
                "DUPLICATE_ID",
                f"instance_id {entry.instance_id!r} on lines {seen[entry.instance_id]} and {line_no}",
                line_no,
            )
        seen[entry.instance_id] = line_no
        if check_files:
            for p in _entry_files(entry):
                if not os.path.exists(p):
                    raise CorpusError("MISSING_FILE", f"{entry.instance_id}: {p} does not exist", line_no)
        entries.append(entry)

    return Manifest(
        corpus=str(header.get("corpus", "")),
        version=str(header.get("version", "")),
        entries=tuple(entries),
        path=path,
    )


def _entry_files(entry: ManifestEntry) -> list[str]:
    files = [entry.gold_path]
    for media in (entry.image, entry.audio, entry.video):
        if media is not None:
            files.append(media.path)
    return files


# --- gold / prediction serialization -------------------------------------

def mask_to_dict(mask: ImageMask) -> dict:
    return {"width": mask.width, "height": mask.height, "rle": list(mask.rle)}


def mask_from_dict(obj: dict) -> ImageMask:
    return ImageMask(width=obj["width"], height=obj["height"], rle=obj["rle"])


def segment_to_dict(seg: AudioSegment) -> dict:
    return {"start": seg.start, "end": seg.end}


def segment_from_dict(obj: dict) -> AudioSegment:
    return AudioSegment(start=float(obj["start"]), end=float(obj["end"]))


def tracklet_to_dict(t: Tracklet) -> dict:
    return {"frames": {str(k): mask_to_dict(v) for k, v in sorted(t.frames.items())}}


def tracklet_from_dict(obj: dict) -> Tracklet:
    return Tracklet(frames={int(k): mask_from_dict(v) for k, v in obj["frames"].items()})


_PAYLOAD_CODECS = {
    Modality.IMAGE: (mask_to_dict, mask_from_dict),
    Modality.AUDIO: (segment_to_dict, segment_from_dict),
    Modality.VIDEO: (tracklet_to_dict, tracklet_from_dict),
}


def grounding_ref_to_dict(ref: GroundingRef) -> dict:
    enc, _ = _PAYLOAD_CODECS[ref.modality]
    return {"modality": ref.modality.value, "payload": enc(ref.payload)}


def grounding_ref_from_dict(obj: dict) -> GroundingRef:
    modality = Modality(obj["modality"])
    _, dec = _PAYLOAD_CODECS[modality]
    return GroundingRef(modality=modality, payload=dec(obj["payload"]))


def mention_to_dict(m: EntityMention) -> dict:
    out = {"surface": m.surface, "label": m.label}
    if m.grounding is not None:
        out["grounding"] = grounding_ref_to_dict(m.grounding)
    return out


def mention_from_dict(obj: dict) -> EntityMention:
    return EntityMention(
        surface=normalize_mention(obj["surface"]),
        label=normalize_mention(obj.get("label", "")),
        grounding=grounding_ref_from_dict(obj["grounding"]) if "grounding" in obj else None,
    )


def event_to_dict(e: EventRecord) -> dict:
    out = {
        "trigger": e.trigger,
        "event_type": e.event_type,
        "arguments": [
            {"mention": a.mention, "role": a.role}
            | ({"grounding": grounding_ref_to_dict(a.grounding)} if a.grounding else {})
            for a in e.arguments
        ],
    }
    if e.grounding is not None:
        out["grounding"] = grounding_ref_to_dict(e.grounding)
    return out


def event_from_dict(obj: dict) -> EventRecord:
    return EventRecord(
        trigger=normalize_mention(obj["trigger"]),
        event_type=normalize_mention(obj["event_type"]),
        arguments=[
            EventArgument(
                mention=normalize_mention(a["mention"]),
                role=normalize_mention(a["role"]),
                grounding=grounding_ref_from_dict(a["grounding"]) if "grounding" in a else None,
            )
            for a in obj.get("arguments", ())
        ],
        grounding=grounding_ref_from_dict(obj["grounding"]) if "grounding" in obj else None,
    )


def triple_to_dict(t: RelationTriple) -> dict:
    return {
        "subject": mention_to_dict(t.subject),
        "relation": t.relation,
        "object": mention_to_dict(t.object),
    }


def triple_from_dict(obj: dict) -> RelationTriple:
    return RelationTriple(
        subject=mention_from_dict(obj["subject"]),
        relation=normalize_mention(obj["relation"]),
        object=mention_from_dict(obj["object"]),
    )


def tuples_to_dict(obj) -> dict:
    return {
        "entities": [mention_to_dict(e) for e in obj.entities],
        "relations": [triple_to_dict(r) for r in obj.relations],
        "events": [event_to_dict(e) for e in obj.events],
    }


def gold_to_dict(gold: GoldAnnotation) -> dict:
    groundings: dict[str, list] = {"image_masks": [], "audio_segments": [], "tracklets": []}
    keys = {Modality.IMAGE: "image_masks", Modality.AUDIO: "audio_segments", Modality.VIDEO: "tracklets"}
    for target in gold.groundings:
        enc, _ = _PAYLOAD_CODECS[target.ref.modality]
        entry = enc(target.ref.payload)
        if target.link is not None:
            entry["link"] = target.link
        groundings[keys[target.ref.modality]].append(entry)
    return {
        "format_version": GOLD_FORMAT_VERSION,
        "instance_id": gold.instance_id,
        "task": gold.task.value,
        **tuples_to_dict(gold),
        "groundings": groundings,
    }


def write_gold(gold: GoldAnnotation, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(gold_to_dict(gold)))


def load_gold(path: str, bundle: ModalityBundle) -> GoldAnnotation:
    """Load a gold file and enforce every invariant against the bundle.

    All violations in the file are collected (never fail-fast) and raised
    together as a GoldValidationError.
    """
    iid = bundle.instance_id
    violations: list[Violation] = []

    def bad(code: str, message: str):
        violations.append(Violation(instance_id=iid, code=code, message=message, path=path))

    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise GoldValidationError([Violation(iid, "PARSE_ERROR", str(exc), path)])

    if data.get("format_version") != GOLD_FORMAT_VERSION:
        bad("BAD_FORMAT_VERSION", f"expected format_version {GOLD_FORMAT_VERSION}")
        raise GoldValidationError(violations)

    try:
        task = Task(data.get("task"))
    except ValueError:
        bad("UNKNOWN_TASK", f"task {data.get('task')!r}")
        raise GoldValidationError(violations)

    entities, relations, events = [], [], []
    for idx, obj in enumerate(data.get("entities", ())):
        try:
            entities.append(mention_from_dict(obj))
        except (ModelError, KeyError, TypeError) as exc:
            bad("BAD_TUPLE", f"entities[{idx}]: {exc}")
    for idx, obj in enumerate(data.get("relations", ())):
        try:
            relations.append(triple_from_dict(obj))
        except (ModelError, KeyError, TypeError) as exc:
            bad("BAD_TUPLE", f"relations[{idx}]: {exc}")
    for idx, obj in enumerate(data.get("events", ())):
        try:
            events.append(event_from_dict(obj))
        except (ModelError, KeyError, TypeError) as exc:
            bad("BAD_TUPLE", f"events[{idx}]: {exc}")

    tuple_count = {Task.NER: len(entities), Task.RE: len(relations), Task.EE: len(events)}[task]
    targets: list[GroundingTarget] = []
    raw_groundings = data.get("groundings", {})

    def check_link(obj: dict, what: str) -> int | None:
        link = obj.get("link")
        if link is None:
            return None
        if not isinstance(link, int) or not (0 <= link < tuple_count):
            bad("BAD_LINK_INDEX", f"{what}: link {link!r} outside tuple list of size {tuple_count}")
            return None
        return link

    def check_mask(obj: dict, what: str, width: int, height: int) -> ImageMask | None:
        try:
            mask = mask_from_dict(obj)
        except (ModelError, KeyError, TypeError) as exc:
            code = exc.code if isinstance(exc, ModelError) else "BAD_MASK"
            bad(code, f"{what}: {exc}")
            return None
        if (mask.width, mask.height) != (width, height):
            bad("DIMENSION_MISMATCH", f"{what}: mask {mask.width}x{mask.height} vs media {width}x{height}")
            return None
        return mask

    for idx, obj in enumerate(raw_groundings.get("image_masks", ())):
        what = f"image_masks[{idx}]"
        if bundle.image is None:
            bad("NO_SUCH_MODALITY", f"{what}: instance has no image")
            continue
        mask = check_mask(obj, what, bundle.image.width, bundle.image.height)
        if mask is not None:
            targets.append(GroundingTarget(GroundingRef(Modality.IMAGE, mask), check_link(obj, what)))

    for idx, obj in enumerate(raw_groundings.get("audio_segments", ())):
        what = f"audio_segments[{idx}]"
        if bundle.audio is None:
            bad("NO_SUCH_MODALITY", f"{what}: instance has no audio")
            continue
        try:
            seg = segment_from_dict(obj)
        except (ModelError, KeyError, TypeError) as exc:
            bad("SEGMENT_OUT_OF_RANGE", f"{what}: {exc}")
            continue
        if seg.end > bundle.audio.duration:
            bad("SEGMENT_OUT_OF_RANGE", f"{what}: [{seg.start}, {seg.end}] exceeds duration {bundle.audio.duration}")
            continue
        targets.append(GroundingTarget(GroundingRef(Modality.AUDIO, seg), check_link(obj, what)))

    for idx, obj in enumerate(raw_groundings.get("tracklets", ())):
        what = f"tracklets[{idx}]"
        if bundle.video is None:
            bad("NO_SUCH_MODALITY", f"{what}: instance has no video")
            continue
        frames: dict[int, ImageMask] = {}
        ok = True
        for key, mobj in obj.get("frames", {}).items():
            try:
                frame = int(key)
            except ValueError:
                bad("FRAME_OUT_OF_RANGE", f"{what}: frame index {key!r} is not an integer")
                ok = False
                continue
            if not (0 <= frame < bundle.video.frame_count):
                bad("FRAME_OUT_OF_RANGE", f"{what}: frame {frame} outside [0, {bundle.video.frame_count})")
                ok = False
                continue
            mask = check_mask(mobj, f"{what}.frames[{key}]", bundle.video.width, bundle.video.height)
            if mask is None:
                ok = False
                continue
            frames[frame] = mask
        if not frames:
            if not obj.get("frames"):
                bad("EMPTY_TRACKLET", f"{what}: no frames")
            continue
        if ok:
            targets.append(GroundingTarget(GroundingRef(Modality.VIDEO, Tracklet(frames)), check_link(obj, what)))

    if violations:
        raise GoldValidationError(sorted(violations))

    try:
        return GoldAnnotation(
            instance_id=str(data.get("instance_id", iid)),
            task=task,
            entities=entities,
            relations=relations,
            events=events,
            groundings=targets,
        )
    except ModelError as exc:
        raise GoldValidationError([Violation(iid, exc.code, str(exc), path)])


def prediction_to_dict(pred: PredictionSet) -> dict:
    return {
        "instance_id": pred.instance_id,
        "task": pred.task.value,
        **tuples_to_dict(pred),
        "extra_groundings": [grounding_ref_to_dict(r) for r in pred.extra_groundings],
    }


def prediction_from_dict(data: dict) -> PredictionSet:
    task = Task(data["task"])
    extra = [grounding_ref_from_dict(obj) for obj in data.get("extra_groundings", ())]
    # gold-style instance-level groundings are accepted for externally
    # produced prediction files
    for key, modality in (("image_masks", Modality.IMAGE), ("audio_segments", Modality.AUDIO),
                          ("tracklets", Modality.VIDEO)):
        for obj in data.get("groundings", {}).get(key, ()):
            _, dec = _PAYLOAD_CODECS[modality]
            extra.append(GroundingRef(modality, dec(obj)))
    return PredictionSet(
        instance_id=data["instance_id"],
        task=task,
        entities=[mention_from_dict(o) for o in data.get("entities", ())],
        relations=[triple_from_dict(o) for o in data.get("relations", ())],
        events=[event_from_dict(o) for o in data.get("events", ())],
        extra_groundings=extra,
    )


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...]
    partition: dict[str, int]  # alignment flag -> instance count

    @property
    def clean(self) -> bool:
        return not self.violations


def validate_corpus(manifest: Manifest) -> ValidationResult:
    """Load every entry, aggregating all violations; never fail-fast."""
    violations: list[Violation] = []
    partition: dict[str, int] = {"shared": 0, "specific": 0}
    for entry in manifest.entries:
        partition[entry.alignment.value] += 1
        missing = [p for p in _entry_files(entry) if not os.path.exists(p)]
        for p in missing:
            violations.append(Violation(entry.instance_id, "MISSING_FILE", f"{p} does not exist", p))
        if entry.gold_path in missing:
            continue
        try:
            gold = load_gold(entry.gold_path, entry.bundle())
        except GoldValidationError as exc:
            violations.extend(exc.violations)
            continue
        if gold.task is not entry.task:
            violations.append(
                Violation(entry.instance_id, "TASK_MISMATCH",
                          f"gold task {gold.task.value} != manifest task {entry.task.value}", entry.gold_path)
            )
        if gold.instance_id != entry.instance_id:
            violations.append(
                Violation(entry.instance_id, "ID_MISMATCH",
                          f"gold instance_id {gold.instance_id!r} != manifest id", entry.gold_path)
            )
    return ValidationResult(violations=tuple(sorted(violations)), partition=partition)
