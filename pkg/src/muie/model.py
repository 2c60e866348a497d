"""Shared domain types: modality bundles, extraction tuples, grounding targets.

Everything here is an immutable value type validated at construction. Violating
inputs raise, they are never silently repaired.
"""

from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass, field


class Task(enum.Enum):
    NER = "NER"
    RE = "RE"
    EE = "EE"


class Modality(enum.Enum):
    TEXT = "text"
    IMAGE = "image"
    AUDIO = "audio"
    VIDEO = "video"


class Alignment(enum.Enum):
    SHARED = "shared"
    SPECIFIC = "specific"


class ModelError(ValueError):
    """Invariant violation in a domain value, with a machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def normalize_mention(raw: str) -> str:
    """Canonicalize a mention surface for comparison.

    Unicode NFC, internal whitespace runs collapsed to single spaces,
    leading/trailing whitespace stripped. Case is preserved. May return an
    empty string; callers treat empty as an invalid mention.
    """
    return " ".join(unicodedata.normalize("NFC", raw).split())


@dataclass(frozen=True)
class MediaRef:
    """Reference to an on-disk media file plus the metadata scoring needs.

    The file itself is never decoded; dimensions/duration come from here.
    """

    path: str
    width: int = 0
    height: int = 0
    duration: float = 0.0
    frame_count: int = 0
    fps: float = 0.0


@dataclass(frozen=True)
class ModalityBundle:
    """One test instance's inputs: any combination of text/image/audio/video."""

    instance_id: str
    text: str | None = None
    image: MediaRef | None = None
    audio: MediaRef | None = None
    video: MediaRef | None = None
    alignment: Alignment = Alignment.SHARED

    def __post_init__(self):
        if not self.instance_id:
            raise ModelError("EMPTY_INSTANCE_ID", "instance_id must be non-empty")
        if self.text is None and self.image is None and self.audio is None and self.video is None:
            raise ModelError("NO_MODALITY", f"{self.instance_id}: at least one modality must be present")
        if self.image is not None and (self.image.width <= 0 or self.image.height <= 0):
            raise ModelError("BAD_DIMENSIONS", f"{self.instance_id}: image dimensions must be > 0")
        if self.audio is not None and self.audio.duration <= 0:
            raise ModelError("BAD_DURATION", f"{self.instance_id}: audio duration must be > 0")
        if self.video is not None:
            v = self.video
            if v.width <= 0 or v.height <= 0 or v.frame_count <= 0 or v.fps <= 0:
                raise ModelError("BAD_DIMENSIONS", f"{self.instance_id}: video dimensions/frames/fps must be > 0")

    def modalities(self) -> set[Modality]:
        present = set()
        if self.text is not None:
            present.add(Modality.TEXT)
        if self.image is not None:
            present.add(Modality.IMAGE)
        if self.audio is not None:
            present.add(Modality.AUDIO)
        if self.video is not None:
            present.add(Modality.VIDEO)
        return present


@dataclass(frozen=True)
class ImageMask:
    """Binary mask in uncompressed row-major RLE, background-first.

    Runs alternate 0-pixels/1-pixels starting with the background count; the
    first run may be 0 for a mask that starts with foreground. The run sum
    must equal width*height exactly.
    """

    width: int
    height: int
    rle: tuple[int, ...]

    def __init__(self, width: int, height: int, rle):
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "rle", tuple(int(r) for r in rle))
        if self.width <= 0 or self.height <= 0:
            raise ModelError("BAD_DIMENSIONS", "mask dimensions must be > 0")
        if any(r < 0 for r in self.rle):
            raise ModelError("NEGATIVE_RUN", "RLE runs must be non-negative")
        total = sum(self.rle)
        if total != self.width * self.height:
            raise ModelError(
                "RLE_SUM_MISMATCH",
                f"RLE sums to {total}, expected {self.width}x{self.height}={self.width * self.height}",
            )


@dataclass(frozen=True)
class AudioSegment:
    """Time interval in seconds, 0 <= start < end."""

    start: float
    end: float

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ModelError("SEGMENT_OUT_OF_RANGE", f"require 0 <= start < end, got [{self.start}, {self.end}]")

    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Tracklet:
    """Per-frame masks following one object through a video."""

    frames: dict[int, ImageMask]

    def __init__(self, frames):
        object.__setattr__(self, "frames", {int(k): v for k, v in dict(frames).items()})
        if not self.frames:
            raise ModelError("EMPTY_TRACKLET", "tracklet must contain at least one frame")
        if any(k < 0 for k in self.frames):
            raise ModelError("FRAME_OUT_OF_RANGE", "frame indices must be >= 0")
        dims = {(m.width, m.height) for m in self.frames.values()}
        if len(dims) > 1:
            raise ModelError("BAD_DIMENSIONS", f"tracklet masks must share dimensions, got {sorted(dims)}")

    @property
    def width(self) -> int:
        return next(iter(self.frames.values())).width

    @property
    def height(self) -> int:
        return next(iter(self.frames.values())).height

    def __eq__(self, other):
        return isinstance(other, Tracklet) and self.frames == other.frames

    def __hash__(self):
        return hash(tuple(sorted(self.frames.items(), key=lambda kv: kv[0])))


GroundingPayload = ImageMask | AudioSegment | Tracklet

_PAYLOAD_TYPES = {
    Modality.IMAGE: ImageMask,
    Modality.AUDIO: AudioSegment,
    Modality.VIDEO: Tracklet,
}


@dataclass(frozen=True)
class GroundingRef:
    """A fine-grained grounding in a non-text modality."""

    modality: Modality
    payload: GroundingPayload

    def __post_init__(self):
        expected = _PAYLOAD_TYPES.get(self.modality)
        if expected is None:
            raise ModelError("BAD_MODALITY", f"groundings exist for image/audio/video, not {self.modality}")
        if not isinstance(self.payload, expected):
            raise ModelError(
                "PAYLOAD_MISMATCH",
                f"{self.modality.value} grounding requires {expected.__name__}, got {type(self.payload).__name__}",
            )


def _check_surface(surface: str, what: str) -> None:
    if not surface:
        raise ModelError("EMPTY_MENTION", f"{what} must be non-empty")
    if surface != surface.strip():
        raise ModelError("UNNORMALIZED_MENTION", f"{what} has leading/trailing whitespace: {surface!r}")


@dataclass(frozen=True)
class EntityMention:
    surface: str
    label: str
    grounding: GroundingRef | None = None

    def __post_init__(self):
        _check_surface(self.surface, "entity surface")


@dataclass(frozen=True)
class RelationTriple:
    subject: EntityMention
    relation: str
    object: EntityMention

    def __post_init__(self):
        if not self.relation:
            raise ModelError("EMPTY_RELATION", "relation label must be non-empty")


@dataclass(frozen=True)
class EventArgument:
    mention: str
    role: str
    grounding: GroundingRef | None = None

    def __post_init__(self):
        _check_surface(self.mention, "argument mention")
        if not self.role:
            raise ModelError("EMPTY_ROLE", "argument role must be non-empty")


@dataclass(frozen=True)
class EventRecord:
    trigger: str
    event_type: str
    arguments: tuple[EventArgument, ...] = ()
    grounding: GroundingRef | None = None

    def __init__(self, trigger, event_type, arguments=(), grounding=None):
        object.__setattr__(self, "trigger", trigger)
        object.__setattr__(self, "event_type", event_type)
        object.__setattr__(self, "arguments", tuple(arguments))
        object.__setattr__(self, "grounding", grounding)
        _check_surface(self.trigger, "event trigger")
        if not self.event_type:
            raise ModelError("EMPTY_EVENT_TYPE", "event type must be non-empty")


@dataclass(frozen=True)
class GroundingTarget:
    """Instance-level grounding with an optional link into the tuple list."""

    ref: GroundingRef
    link: int | None = None


def _check_task_consistency(task, entities, relations, events, instance_id):
    populated = {
        Task.NER: entities,
        Task.RE: relations,
        Task.EE: events,
    }
    for other, collection in populated.items():
        if other is not task and collection:
            raise ModelError(
                "TASK_MISMATCH",
                f"{instance_id}: task {task.value} must not carry {other.value} tuples",
            )


@dataclass(frozen=True)
class GoldAnnotation:
    instance_id: str
    task: Task
    entities: tuple[EntityMention, ...] = ()
    relations: tuple[RelationTriple, ...] = ()
    events: tuple[EventRecord, ...] = ()
    groundings: tuple[GroundingTarget, ...] = ()

    def __init__(self, instance_id, task, entities=(), relations=(), events=(), groundings=()):
        object.__setattr__(self, "instance_id", instance_id)
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "entities", tuple(entities))
        object.__setattr__(self, "relations", tuple(relations))
        object.__setattr__(self, "events", tuple(events))
        object.__setattr__(self, "groundings", tuple(groundings))
        _check_task_consistency(task, self.entities, self.relations, self.events, instance_id)
        n = self.tuple_count()
        for target in self.groundings:
            if target.link is not None and not (0 <= target.link < n):
                raise ModelError("BAD_LINK_INDEX", f"{instance_id}: link {target.link} outside tuple list of size {n}")

    def tuple_count(self) -> int:
        return len({Task.NER: self.entities, Task.RE: self.relations, Task.EE: self.events}[self.task])

    def grounding_payloads(self, modality: Modality) -> list[GroundingPayload]:
        return [t.ref.payload for t in self.groundings if t.ref.modality is modality]


@dataclass(frozen=True)
class PredictionSet:
    """Predicted tuples for one instance, plus unattached instance-level groundings."""

    instance_id: str
    task: Task
    entities: tuple[EntityMention, ...] = ()
    relations: tuple[RelationTriple, ...] = ()
    events: tuple[EventRecord, ...] = ()
    extra_groundings: tuple[GroundingRef, ...] = ()

    def __init__(self, instance_id, task, entities=(), relations=(), events=(), extra_groundings=()):
        object.__setattr__(self, "instance_id", instance_id)
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "entities", tuple(entities))
        object.__setattr__(self, "relations", tuple(relations))
        object.__setattr__(self, "events", tuple(events))
        object.__setattr__(self, "extra_groundings", tuple(extra_groundings))
        _check_task_consistency(task, self.entities, self.relations, self.events, instance_id)

    def grounding_payloads(self, modality: Modality) -> list[GroundingPayload]:
        """All predicted groundings of one modality: mention-attached plus instance-level."""
        refs: list[GroundingRef] = []
        for e in self.entities:
            if e.grounding is not None:
                refs.append(e.grounding)
        for r in self.relations:
            for side in (r.subject, r.object):
                if side.grounding is not None:
                    refs.append(side.grounding)
        for ev in self.events:
            if ev.grounding is not None:
                refs.append(ev.grounding)
            for a in ev.arguments:
                if a.grounding is not None:
                    refs.append(a.grounding)
        refs.extend(self.extra_groundings)
        return [r.payload for r in refs if r.modality is modality]
