"""Deterministic stub backends speaking the stdio wire protocol.

These let the pipeline and the acceptance suite run with no ML models
installed:

  oracle   answer from the gold annotations (perfect prediction)
  corrupt  gold degraded by --corrupt-pct; the degradation is nested across
           k values, so per-cell scores are non-increasing in k
  echo     replay meta-response text from a fixture json ({instance_id: text},
           "*" as fallback); uie kind only
  fixed    return one fixture payload for every request; grounding kinds

Launch: muie-stub --kind uie --mode oracle --manifest corpus/muie-manifest.jsonl
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from ..corpus import load_gold, load_manifest
from ..geometry import rle_decode, rle_encode, DenseMask
from ..harness import KIND_MODALITY
from ..metaresponse import (
    MetaResponse,
    ModuleCall,
    ParsedEntity,
    ParsedEvent,
    ParsedTriple,
    render_meta_response,
)
from ..model import (
    AudioSegment,
    EntityMention,
    EventArgument,
    EventRecord,
    GoldAnnotation,
    ImageMask,
    Modality,
    Task,
    Tracklet,
)

CORRUPT_MARK = "~x"

MODULE_NAMES = {
    Modality.IMAGE: "Image Segmenter",
    Modality.AUDIO: "Audio Segmenter",
    Modality.VIDEO: "Video Tracker",
}
INSTRUCTION_VERBS = {
    Modality.IMAGE: "Segmentation",
    Modality.AUDIO: "Audio segmentation",
    Modality.VIDEO: "Tracking",
}


def corrupt_count(n: int, pct: int) -> int:
    """How many of n items to corrupt at pct percent; nested across pct."""
    return n * pct // 100


def corrupt_mask(mask: ImageMask, pct: int) -> ImageMask:
    """Clear the first pct percent of foreground pixels (row-major order)."""
    if pct <= 0:
        return mask
    dense = rle_decode(mask)
    flat = dense.bits.ravel().copy()
    fg = np.flatnonzero(flat)
    clear = len(fg) * pct // 100
    flat[fg[:clear]] = False
    return rle_encode(DenseMask(mask.width, mask.height, flat))


def corrupt_segment(seg: AudioSegment, pct: int) -> AudioSegment | None:
    """Shrink the segment from the right; at 100 percent it disappears."""
    if pct <= 0:
        return seg
    if pct >= 100:
        return None
    return AudioSegment(seg.start, seg.start + seg.length() * (100 - pct) / 100)


def corrupt_tracklet(tracklet: Tracklet, pct: int) -> Tracklet:
    return Tracklet({f: corrupt_mask(m, pct) for f, m in tracklet.frames.items()})


def _spoil(surface: str) -> str:
    return surface + CORRUPT_MARK


def meta_from_gold(gold: GoldAnnotation, pct: int = 0) -> MetaResponse:
    """Render gold tuples as a meta-response, corrupting the first
    corrupt_count tuples; module calls cover each grounded modality."""
    linked = {t.link for t in gold.groundings if t.link is not None}
    entities, triples, events = [], [], []
    if gold.task is Task.NER:
        spoiled = corrupt_count(len(gold.entities), pct)
        for i, e in enumerate(gold.entities):
            surface = _spoil(e.surface) if i < spoiled else e.surface
            entities.append(ParsedEntity(EntityMention(surface, e.label), concept=i in linked))
    elif gold.task is Task.RE:
        spoiled = corrupt_count(len(gold.relations), pct)
        for i, r in enumerate(gold.relations):
            relation = _spoil(r.relation) if i < spoiled else r.relation
            triples.append(
                ParsedTriple(
                    subject=EntityMention(r.subject.surface, r.subject.label),
                    relation=relation,
                    object=EntityMention(r.object.surface, r.object.label),
                    subject_concept=i in linked,
                )
            )
    else:
        spoiled = corrupt_count(len(gold.events), pct)
        for i, ev in enumerate(gold.events):
            bad = i < spoiled
            events.append(
                ParsedEvent(
                    event=EventRecord(
                        trigger=_spoil(ev.trigger) if bad else ev.trigger,
                        event_type=ev.event_type,
                        arguments=[
                            EventArgument(_spoil(a.mention) if bad else a.mention, a.role)
                            for a in ev.arguments
                        ],
                    ),
                    trigger_concept=i in linked,
                    argument_concepts=tuple(False for _ in ev.arguments),
                )
            )

    calls = []
    for modality in (Modality.IMAGE, Modality.AUDIO, Modality.VIDEO):
        if gold.grounding_payloads(modality):
            calls.append(
                ModuleCall(
                    module=MODULE_NAMES[modality],
                    instruction=f"{INSTRUCTION_VERBS[modality]}: 'all gold targets'",
                )
            )
    return MetaResponse(
        task=gold.task,
        entities=tuple(entities),
        triples=tuple(triples),
        events=tuple(events),
        module_calls=tuple(calls),
    )


def base_instance_id(request_id: str) -> str:
    """Strip the retry (@n) and call-index (#n) suffixes added by the harness."""
    return request_id.split("@")[0].split("#")[0]


class Stub:
    def __init__(self, args):
        self.kind = args.kind
        self.mode = args.mode
        self.pct = args.corrupt_pct
        self.delay = args.delay
        self.fixture = {}
        if args.fixture:
            with open(args.fixture, "r", encoding="utf-8") as fh:
                self.fixture = json.load(fh)
        self.entries = {}
        if args.manifest:
            self.entries = load_manifest(args.manifest).by_id()

    def _gold(self, iid: str) -> GoldAnnotation | None:
        entry = self.entries.get(iid)
        if entry is None:
            return None
        return load_gold(entry.gold_path, entry.bundle())

    def handle(self, request: dict) -> dict:
        rid = str(request.get("id", ""))
        iid = base_instance_id(rid)
        if self.delay:
            time.sleep(self.delay)
        if self.mode == "echo":
            text = self.fixture.get(iid, self.fixture.get("*", ""))
            return {"id": rid, "text": text}
        if self.mode == "fixed":
            return {"id": rid, **self.fixture}
        pct = self.pct if self.mode == "corrupt" else 0
        gold = self._gold(iid)
        if self.kind == "uie":
            if gold is None:
                return {"id": rid, "text": ""}
            return {"id": rid, "text": render_meta_response(meta_from_gold(gold, pct))}
        modality = KIND_MODALITY[self.kind]
        payloads = gold.grounding_payloads(modality) if gold else []
        if modality is Modality.IMAGE:
            masks = [corrupt_mask(m, pct) for m in payloads]
            return {"id": rid, "masks": [list(m.rle) for m in masks]}
        if modality is Modality.AUDIO:
            segments = [corrupt_segment(s, pct) for s in payloads]
            return {"id": rid, "segments": [[s.start, s.end] for s in segments if s is not None]}
        tracklets = [corrupt_tracklet(t, pct) for t in payloads]
        return {
            "id": rid,
            "tracklets": [
                {str(f): list(m.rle) for f, m in sorted(t.frames.items())} for t in tracklets
            ],
        }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="muie-stub", description=__doc__)
    parser.add_argument("--kind", required=True, choices=["uie", "image_segmenter", "video_tracker", "audio_segmenter"])
    parser.add_argument("--mode", required=True, choices=["oracle", "corrupt", "echo", "fixed"])
    parser.add_argument("--manifest", default="")
    parser.add_argument("--fixture", default="")
    parser.add_argument("--corrupt-pct", type=int, default=0)
    parser.add_argument("--delay", type=float, default=0.0)
    args = parser.parse_args(argv)

    stub = Stub(args)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            continue
        response = stub.handle(request)
        sys.stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
