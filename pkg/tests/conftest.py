from __future__ import annotations

import json
import shlex
import subprocess
import sys
from pathlib import Path

import pytest

from muie.corpus import write_gold
from muie.jsonutil import canonical_dumps
from muie.model import (
    Alignment,
    AudioSegment,
    EntityMention,
    EventArgument,
    EventRecord,
    GoldAnnotation,
    GroundingRef,
    GroundingTarget,
    ImageMask,
    Modality,
    RelationTriple,
    Task,
    Tracklet,
)

FIXTURES = Path(__file__).parent / "fixtures"

# one row per populated (modality combo, task, dataset) cell of the benchmark grid
GRID = [
    ("I", Task.NER, "PASCAL-C"),
    ("I", Task.RE, "VRD"),
    ("I", Task.EE, "imSitu"),
    ("V", Task.EE, "VidSitu"),
    ("A", Task.NER, "ACE05-Aud"),
    ("A", Task.RE, "ReTACRED"),
    ("T+I", Task.NER, "Twt17"),
    ("T+I", Task.RE, "MNRE"),
    ("T+I", Task.EE, "M2E2"),
    ("T+V", Task.EE, "VidSitu-Txt"),
    ("T+A", Task.NER, "ACE05-Aud"),
    ("T+A", Task.RE, "ReTACRED"),
    ("I+A", Task.RE, "MNRE-Aud"),
    ("T+I+A", Task.NER, "Twt17-Aud"),
    ("V+A", Task.EE, "VidSitu-Aud"),
]

IMG_W, IMG_H = 8, 8
VID_W, VID_H, VID_FRAMES, VID_FPS = 6, 6, 4, 5.0
AUDIO_SECS = 10.0

# disjoint 8x8 masks: rows 0-1 and rows 4-5
IMG_MASKS = [ImageMask(IMG_W, IMG_H, [0, 16, 48]), ImageMask(IMG_W, IMG_H, [32, 16, 16])]
# disjoint 6x6 masks: row 0 and row 2
VID_MASKS = [ImageMask(VID_W, VID_H, [0, 6, 30]), ImageMask(VID_W, VID_H, [12, 6, 18])]
SEGMENTS = [AudioSegment(1.0, 3.0), AudioSegment(5.0, 8.0)]

ENTITY_POOL = [("Trump", "person"), ("Merkel", "person"), ("Paris", "location")]
TRIPLE_POOL = [
    (("Trump", "person"), "peer", ("Merkel", "person")),
    (("Paris", "location"), "capital_of", ("France", "country")),
]
EVENT_POOL = [
    ("bombed", "Attack", [("market", "Target"), ("army", "Agent")]),
    ("met", "Meet", [("Paris", "Place")]),
]

SCHEMAS = {
    Task.NER: (["person", "location", "country"], []),
    Task.RE: (["peer", "capital_of"], []),
    Task.EE: (["Attack", "Meet"], ["Target", "Agent", "Place"]),
}


def gold_tuples(task: Task, n: int):
    if task is Task.NER:
        return dict(entities=[EntityMention(s, l) for s, l in ENTITY_POOL[:n]])
    if task is Task.RE:
        return dict(relations=[
            RelationTriple(EntityMention(*s), r, EntityMention(*o)) for s, r, o in TRIPLE_POOL[:n]
        ])
    return dict(events=[
        EventRecord(trigger, etype, [EventArgument(m, r) for m, r in args])
        for trigger, etype, args in EVENT_POOL[:n]
    ])


def gold_groundings(combo: str, n: int):
    targets = []
    letters = combo.split("+")
    if "I" in letters:
        targets += [GroundingTarget(GroundingRef(Modality.IMAGE, m), link=i)
                    for i, m in enumerate(IMG_MASKS[:n])]
    if "A" in letters:
        targets += [GroundingTarget(GroundingRef(Modality.AUDIO, s), link=i)
                    for i, s in enumerate(SEGMENTS[:n])]
    if "V" in letters:
        tracklets = [Tracklet({0: m, 1: m}) for m in VID_MASKS[:n]]
        targets += [GroundingTarget(GroundingRef(Modality.VIDEO, t), link=i)
                    for i, t in enumerate(tracklets)]
    return targets


def build_corpus(root: Path, per_cell: int = 2, name: str = "fixture-corpus") -> Path:
    """Write a complete corpus covering all nine modality combinations."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "media").mkdir(exist_ok=True)
    (root / "gold").mkdir(exist_ok=True)
    lines = [json.dumps({"format_version": 1, "corpus": name, "version": "1"})]
    for combo, task, dataset in GRID:
        for i in range(per_cell):
            iid = f"{dataset}-{combo.replace('+', '')}-{task.value}-{i:03d}"
            n_tuples = (i % 2) + 1  # 1 or 2 tuples for bucket variety
            labels, roles = SCHEMAS[task]
            entry = {
                "instance_id": iid,
                "dataset": dataset,
                "modality_combo": combo,
                "task": task.value,
                "alignment": "shared" if i % 2 == 0 else "specific",
                "gold": f"gold/{iid}.json",
                "label_schema": labels,
            }
            if roles:
                entry["role_schema"] = roles
            letters = combo.split("+")
            if "T" in letters:
                entry["text"] = f"Sample text for {iid}."
            if "I" in letters:
                path = f"media/{iid}.jpg"
                (root / path).write_bytes(b"jpg placeholder")
                entry["image"] = {"path": path, "width": IMG_W, "height": IMG_H}
            if "A" in letters:
                path = f"media/{iid}.wav"
                (root / path).write_bytes(b"wav placeholder")
                entry["audio"] = {"path": path, "duration": AUDIO_SECS}
            if "V" in letters:
                path = f"media/{iid}.mp4"
                (root / path).write_bytes(b"mp4 placeholder")
                entry["video"] = {
                    "path": path, "frame_count": VID_FRAMES, "fps": VID_FPS,
                    "width": VID_W, "height": VID_H,
                }
            gold = GoldAnnotation(
                instance_id=iid,
                task=task,
                groundings=gold_groundings(combo, n_tuples),
                **gold_tuples(task, n_tuples),
            )
            write_gold(gold, str(root / "gold" / f"{iid}.json"))
            lines.append(json.dumps(entry))
    manifest = root / "muie-manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@pytest.fixture(scope="session")
def corpus_manifest(tmp_path_factory) -> Path:
    return build_corpus(tmp_path_factory.mktemp("corpus"))


def stub_cmd(kind: str, mode: str, manifest: Path | None = None, **kw) -> str:
    parts = [shlex.quote(sys.executable), "-m", "muie.backends.stub", "--kind", kind, "--mode", mode]
    if manifest is not None:
        parts += ["--manifest", shlex.quote(str(manifest))]
    for key, value in kw.items():
        parts += [f"--{key.replace('_', '-')}", shlex.quote(str(value))]
    return " ".join(parts)


def run_cli(args: list[str], stdin: bytes = b"", timeout: float = 300.0):
    """Run the installed CLI as a subprocess; returns (exit code, stdout, stderr)."""
    proc = subprocess.run(
        [sys.executable, "-m", "muie.cli", *args],
        input=stdin,
        capture_output=True,
        timeout=timeout,
    )
    return proc.returncode, proc.stdout, proc.stderr


def write_json(path: Path, obj) -> None:
    path.write_text(canonical_dumps(obj), encoding="utf-8")
