"""Task prompt construction and meta-response handling.

A meta-response is the three-part structured model output: a `<UIE>` section
carrying extraction tuples, followed by `<Module>`/`<Instruction>` pairs that
invoke grounding modules. The parser is tolerant of generative noise
(quote styles, trailing commas, blank lines, preamble text); malformed tuples
are skipped with warnings, never fatal. The full grammar lives in
docs/meta-response.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .model import (
    EntityMention,
    EventArgument,
    EventRecord,
    GroundingRef,
    Modality,
    ModelError,
    PredictionSet,
    RelationTriple,
    Task,
    normalize_mention,
)

CONCEPT_TOKEN = "<concept>"

_CONCEPT_SENTENCE = (
    'If an entity possibly has a counterpart in the given image or video or audio, '
    'please generate a token "<concept>" after the entity word, '
    "for subsequent cross-modal grounding."
)

_TASK_SENTENCES = {
    Task.NER: (
        "Please recognize all entity words and categorize them by pre-defined labels "
        "in the given text, and outline them in the given image or video or audio "
        'correspondingly. The output format should be "(entity1, label1)(entity2, label2)".'
    ),
    Task.RE: (
        "Please extract all relations between named entities, and outline them in the "
        "given image or video or audio correspondingly. The output format should be "
        '"(subject entity, relation, object entity)".'
    ),
    Task.EE: (
        "Extract all the possible events in the video, and track the argument mentions "
        "correspondingly. Each event associated with an event type must have a trigger "
        "verb. If possible, please give detailed arguments for each event."
    ),
}

_LABEL_LINE_PREFIX = {
    Task.NER: "Candidate category labels: ",
    Task.RE: "Candidate relation labels: ",
    Task.EE: "Candidate event types: ",
}
_ROLE_LINE_PREFIX = "Candidate event argument types: "


@dataclass(frozen=True)
class PromptSpec:
    task: Task
    label_schema: tuple[str, ...]
    modalities_present: frozenset[Modality]
    role_schema: tuple[str, ...] = ()

    def __init__(self, task, label_schema, modalities_present, role_schema=()):
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "label_schema", tuple(label_schema))
        object.__setattr__(self, "modalities_present", frozenset(modalities_present))
        object.__setattr__(self, "role_schema", tuple(role_schema))
        if not self.label_schema:
            raise ModelError("EMPTY_SCHEMA", "label schema must be non-empty")
        if not self.modalities_present:
            raise ModelError("EMPTY_MODALITIES", "at least one modality must be present")
        for label in self.label_schema + self.role_schema:
            if not label or "," in label or "\n" in label:
                raise ModelError("BAD_LABEL", f"labels must be non-empty and comma/newline free: {label!r}")


def build_prompt(spec: PromptSpec) -> str:
    """Render the task prompt with the candidate label schema interpolated.

    The `<concept>` sentence is emitted only when a non-text modality is
    present (the NER/RE templates ask for grounding tokens; pure-text input
    has nothing to ground into). The EE template requests argument tracking
    directly and carries no `<concept>` sentence.
    """
    if spec.task not in _TASK_SENTENCES:
        raise ModelError("UNKNOWN_TASK", f"no prompt template for {spec.task!r}")
    lines = [_TASK_SENTENCES[spec.task]]
    non_text = spec.modalities_present - {Modality.TEXT}
    if non_text and spec.task in (Task.NER, Task.RE):
        lines.append(_CONCEPT_SENTENCE)
    lines.append(_LABEL_LINE_PREFIX[spec.task] + ", ".join(spec.label_schema))
    if spec.task is Task.EE and spec.role_schema:
        lines.append(_ROLE_LINE_PREFIX + ", ".join(spec.role_schema))
    return "\n".join(lines)


def parse_label_schema(prompt: str, task: Task) -> list[str]:
    """Recover the candidate label list from a prompt built by build_prompt."""
    prefix = _LABEL_LINE_PREFIX[task]
    for line in prompt.split("\n"):
        if line.startswith(prefix):
            return line[len(prefix):].split(", ")
    raise ModelError("NO_LABEL_LINE", f"prompt has no '{prefix.strip()}' line")


class ParseError(ValueError):
    """Unrecoverable structural defect in a meta-response."""

    def __init__(self, code: str, message: str, byte_offset: int):
        super().__init__(f"{code} at byte {byte_offset}: {message}")
        self.code = code
        self.byte_offset = byte_offset


@dataclass(frozen=True)
class ParseWarning:
    code: str
    detail: str


@dataclass(frozen=True)
class ModuleCall:
    module: str
    instruction: str


@dataclass(frozen=True)
class ParsedEntity:
    mention: EntityMention
    concept: bool = False


@dataclass(frozen=True)
class ParsedTriple:
    subject: EntityMention
    relation: str
    object: EntityMention
    subject_concept: bool = False
    object_concept: bool = False

    def triple(self) -> RelationTriple:
        return RelationTriple(subject=self.subject, relation=self.relation, object=self.object)


@dataclass(frozen=True)
class ParsedEvent:
    event: EventRecord
    trigger_concept: bool = False
    argument_concepts: tuple[bool, ...] = ()


@dataclass(frozen=True)
class MetaResponse:
    """Parsed three-part model output. raw/warnings are carried but not compared."""

    task: Task
    entities: tuple[ParsedEntity, ...] = ()
    triples: tuple[ParsedTriple, ...] = ()
    events: tuple[ParsedEvent, ...] = ()
    module_calls: tuple[ModuleCall, ...] = ()
    uie_block_raw: str = field(default="", compare=False)
    warnings: tuple[ParseWarning, ...] = field(default=(), compare=False)

    def record_count(self) -> int:
        return len(self.entities) + len(self.triples) + len(self.events)


_TUPLE_RE = re.compile(r"\(([^()]*)\)")
_EVENT_HEADER_RE = re.compile(r"^\[(.*)\]\s*trigger\s*:\s*(.*)$", re.IGNORECASE)
_EVENT_ARG_RE = re.compile(r"^[-*•]\s*([^:]+):\s*(.*)$")
_QUOTE_PAIRS = [
    re.compile(r"'([^']*)'"),
    re.compile(r'"([^"]*)"'),
    re.compile(r"‘([^’]*)’"),
    re.compile(r"“([^”]*)”"),
    re.compile(r"`([^'`]*)'"),
]


def _clean_item(item: str) -> tuple[str, bool]:
    """Strip quotes and the <concept> token; return (normalized text, concept flag)."""
    text = item.strip()
    concept = CONCEPT_TOKEN in text
    if concept:
        text = text.replace(CONCEPT_TOKEN, " ")
    text = text.strip()
    for open_q, close_q in ("''", '""', "‘’", "“”", "`'", "´'"):
        if len(text) >= 2 and text[0] == open_q and text[-1] == close_q:
            text = text[1:-1]
            break
    return normalize_mention(text), concept


def _split_items(body: str) -> list[str]:
    items = body.split(",")
    while items and not items[-1].strip():
        items.pop()  # trailing comma tolerance
    return items


def _line_byte_offsets(text: str) -> list[tuple[int, str]]:
    offsets = []
    pos = 0
    for line in text.split("\n"):
        offsets.append((pos, line))
        pos += len(line.encode("utf-8")) + 1
    return offsets


def parse_meta_response(text: str, task: Task) -> MetaResponse:
    """Parse raw model output into typed records and module invocations.

    Raises ParseError for structural defects (no `<UIE>` section, an
    `<Instruction>` with no preceding `<Module>`); anything else degrades to
    warnings. Identical input yields a structurally identical result.
    """
    lines = _line_byte_offsets(text)
    uie_at = None
    for idx, (_, line) in enumerate(lines):
        if line.strip() == "<UIE>":
            uie_at = idx
            break
    if uie_at is None:
        raise ParseError("MISSING_UIE", "no <UIE> section in response", 0)

    warnings: list[ParseWarning] = []
    uie_lines: list[str] = []
    calls: list[ModuleCall] = []
    pending_module: str | None = None  # module name awaiting its instruction
    i = uie_at + 1
    n = len(lines)
    section = "uie"
    while i < n:
        offset, line = lines[i]
        tag = line.strip()
        if tag == "<Module>":
            if pending_module is not None:
                warnings.append(ParseWarning("MODULE_WITHOUT_INSTRUCTION", pending_module))
            pending_module = ""
            section = "module-name"
        elif tag == "<Instruction>":
            if pending_module is None:
                raise ParseError("INSTRUCTION_WITHOUT_MODULE", "instruction has no preceding module", offset)
            # collect instruction text until the next tag line
            body: list[str] = []
            i += 1
            while i < n and lines[i][1].strip() not in ("<Module>", "<Instruction>"):
                body.append(lines[i][1])
                i += 1
            instruction = "\n".join(body).strip()
            if pending_module:
                calls.append(ModuleCall(module=pending_module, instruction=instruction))
            else:
                warnings.append(ParseWarning("EMPTY_MODULE_NAME", instruction))
            pending_module = None
            section = "between"
            continue
        elif section == "uie":
            uie_lines.append(line)
        elif section == "module-name":
            if tag:
                pending_module = tag
                section = "module-named"
        # junk between an instruction and the next <Module> is ignored
        i += 1
    if pending_module is not None:
        warnings.append(ParseWarning("MODULE_WITHOUT_INSTRUCTION", pending_module))

    uie_block = "\n".join(uie_lines)
    entities: list[ParsedEntity] = []
    triples: list[ParsedTriple] = []
    events: list[ParsedEvent] = []

    if task is Task.NER:
        for m in _TUPLE_RE.finditer(uie_block):
            items = _split_items(m.group(1))
            if len(items) != 2:
                warnings.append(ParseWarning("MALFORMED_TUPLE", m.group(0)))
                continue
            surface, concept = _clean_item(items[0])
            label, _ = _clean_item(items[1])
            if not surface or not label:
                warnings.append(ParseWarning("EMPTY_MENTION", m.group(0)))
                continue
            entities.append(ParsedEntity(EntityMention(surface=surface, label=label), concept=concept))
    elif task is Task.RE:
        for m in _TUPLE_RE.finditer(uie_block):
            items = _split_items(m.group(1))
            if len(items) != 3:
                warnings.append(ParseWarning("MALFORMED_TUPLE", m.group(0)))
                continue
            subj, s_c = _clean_item(items[0])
            rel, _ = _clean_item(items[1])
            obj, o_c = _clean_item(items[2])
            if not subj or not rel or not obj:
                warnings.append(ParseWarning("EMPTY_MENTION", m.group(0)))
                continue
            triples.append(
                ParsedTriple(
                    subject=EntityMention(surface=subj, label=""),
                    relation=rel,
                    object=EntityMention(surface=obj, label=""),
                    subject_concept=s_c,
                    object_concept=o_c,
                )
            )
    elif task is Task.EE:
        _parse_events(uie_block, events, warnings)
    else:
        raise ModelError("UNKNOWN_TASK", f"cannot parse for task {task!r}")

    return MetaResponse(
        task=task,
        entities=tuple(entities),
        triples=tuple(triples),
        events=tuple(events),
        module_calls=tuple(calls),
        uie_block_raw=uie_block,
        warnings=tuple(warnings),
    )


def _parse_events(uie_block: str, events: list[ParsedEvent], warnings: list[ParseWarning]) -> None:
    """Accept both the block form ("[Type] trigger: word" / "- role: mention")
    and the flat tuple form "(trigger, Type, role1: arg1, ...)"."""
    current: dict | None = None

    def flush():
        nonlocal current
        if current is None:
            return
        args = [EventArgument(mention=m, role=r) for r, m, _ in current["args"]]
        events.append(
            ParsedEvent(
                event=EventRecord(
                    trigger=current["trigger"],
                    event_type=current["type"],
                    arguments=args,
                ),
                trigger_concept=current["trigger_concept"],
                argument_concepts=tuple(c for _, _, c in current["args"]),
            )
        )
        current = None

    for line in uie_block.split("\n"):
        stripped = line.strip()
        if not stripped:
            continue
        header = _EVENT_HEADER_RE.match(stripped)
        if header:
            flush()
            event_type, _ = _clean_item(header.group(1))
            trigger, t_c = _clean_item(header.group(2))
            if not event_type or not trigger:
                warnings.append(ParseWarning("MALFORMED_TUPLE", stripped))
                continue
            current = {"type": event_type, "trigger": trigger, "trigger_concept": t_c, "args": []}
            continue
        arg = _EVENT_ARG_RE.match(stripped)
        if arg:
            if current is None:
                warnings.append(ParseWarning("ORPHAN_ARGUMENT", stripped))
                continue
            role, _ = _clean_item(arg.group(1))
            mention, a_c = _clean_item(arg.group(2))
            if not role or not mention:
                warnings.append(ParseWarning("MALFORMED_TUPLE", stripped))
                continue
            current["args"].append((role, mention, a_c))
            continue
        for m in _TUPLE_RE.finditer(stripped):
            flush()
            items = _split_items(m.group(1))
            if len(items) < 2:
                warnings.append(ParseWarning("MALFORMED_TUPLE", m.group(0)))
                continue
            trigger, t_c = _clean_item(items[0])
            event_type, _ = _clean_item(items[1])
            if not trigger or not event_type:
                warnings.append(ParseWarning("EMPTY_MENTION", m.group(0)))
                continue
            args = []
            for item in items[2:]:
                if ":" not in item:
                    warnings.append(ParseWarning("MALFORMED_ARGUMENT", item.strip()))
                    continue
                role_part, mention_part = item.split(":", 1)
                role, _ = _clean_item(role_part)
                mention, a_c = _clean_item(mention_part)
                if not role or not mention:
                    warnings.append(ParseWarning("MALFORMED_ARGUMENT", item.strip()))
                    continue
                args.append((role, mention, a_c))
            events.append(
                    ParsedEvent(
                        event=EventRecord(
                            trigger=trigger,
                            event_type=event_type,
                            arguments=[EventArgument(mention=m_, role=r) for r, m_, _ in args],
                        ),
                        trigger_concept=t_c,
                    argument_concepts=tuple(c for _, _, c in args),
                )
            )
    flush()


def _concept_suffix(flag: bool) -> str:
    return f" {CONCEPT_TOKEN}" if flag else ""


def render_meta_response(meta: MetaResponse) -> str:
    """Render the canonical text form; parse(render(m)) == m."""
    out = ["<UIE>"]
    for pe in meta.entities:
        out.append(f"({pe.mention.surface}{_concept_suffix(pe.concept)}, {pe.mention.label})")
    for pt in meta.triples:
        out.append(
            f"({pt.subject.surface}{_concept_suffix(pt.subject_concept)}, {pt.relation}, "
            f"{pt.object.surface}{_concept_suffix(pt.object_concept)})"
        )
    for pv in meta.events:
        ev = pv.event
        out.append(f"[{ev.event_type}] trigger: {ev.trigger}{_concept_suffix(pv.trigger_concept)}")
        for arg, flag in zip(ev.arguments, pv.argument_concepts):
            out.append(f"- {arg.role}: {arg.mention}{_concept_suffix(flag)}")
    for call in meta.module_calls:
        out.append("<Module>")
        out.append(call.module)
        out.append("<Instruction>")
        out.append(call.instruction)
    return "\n".join(out) + "\n"


def meta_response_to_dict(meta: MetaResponse) -> dict:
    """Canonical json view used by the parse subcommand and the bindings."""
    return {
        "task": meta.task.value,
        "entities": [
            {"surface": e.mention.surface, "label": e.mention.label, "concept": e.concept}
            for e in meta.entities
        ],
        "relations": [
            {
                "subject": t.subject.surface,
                "relation": t.relation,
                "object": t.object.surface,
                "subject_concept": t.subject_concept,
                "object_concept": t.object_concept,
            }
            for t in meta.triples
        ],
        "events": [
            {
                "trigger": v.event.trigger,
                "event_type": v.event.event_type,
                "trigger_concept": v.trigger_concept,
                "arguments": [
                    {"role": a.role, "mention": a.mention, "concept": c}
                    for a, c in zip(v.event.arguments, v.argument_concepts)
                ],
            }
            for v in meta.events
        ],
        "module_calls": [
            {"module": c.module, "instruction": c.instruction} for c in meta.module_calls
        ],
        "warnings": [{"code": w.code, "detail": w.detail} for w in meta.warnings],
    }


@dataclass(frozen=True)
class GroundingResult:
    """One grounding payload produced by the module invoked at call_index."""

    call_index: int
    payload: GroundingRef


class _Slot:
    """A groundable mention position inside the parsed records."""

    def __init__(self, surface: str, concept: bool):
        self.surface = surface
        self.concept = concept
        self.claimed: dict[Modality, GroundingRef] = {}

    def take(self, ref: GroundingRef) -> None:
        self.claimed[ref.modality] = ref

    def has(self, modality: Modality) -> bool:
        return modality in self.claimed

    def first_ref(self) -> GroundingRef | None:
        return next(iter(self.claimed.values()), None)

    def surplus_refs(self) -> list[GroundingRef]:
        return list(self.claimed.values())[1:]


def _quoted_spans(instruction: str) -> set[str]:
    found = set()
    for pattern in _QUOTE_PAIRS:
        for m in pattern.finditer(instruction):
            norm = normalize_mention(m.group(1))
            if norm:
                found.add(norm)
    return found


def link_groundings(
    meta: MetaResponse,
    results: list[GroundingResult],
    instance_id: str = "",
) -> PredictionSet:
    """Attach grounding payloads to the parsed records.

    Results whose instruction quotes a known mention link to it directly;
    the rest link positionally, the i-th `<concept>`-flagged mention taking
    the i-th unclaimed result. Leftovers stay as instance-level groundings.
    """
    for r in results:
        if not (0 <= r.call_index < len(meta.module_calls)):
            raise ModelError(
                "BAD_CALL_INDEX",
                f"call_index {r.call_index} outside module_calls of size {len(meta.module_calls)}",
            )

    slots: list[_Slot] = []
    for pe in meta.entities:
        slots.append(_Slot(pe.mention.surface, pe.concept))
    for pt in meta.triples:
        slots.append(_Slot(pt.subject.surface, pt.subject_concept))
        slots.append(_Slot(pt.object.surface, pt.object_concept))
    for pv in meta.events:
        slots.append(_Slot(pv.event.trigger, pv.trigger_concept))
        for arg, flag in zip(pv.event.arguments, pv.argument_concepts):
            slots.append(_Slot(arg.mention, flag))

    unclaimed: list[GroundingResult] = []
    for r in results:
        quoted = _quoted_spans(meta.module_calls[r.call_index].instruction)
        slot = next((s for s in slots if s.surface in quoted and not s.has(r.payload.modality)), None)
        if slot is not None:
            slot.take(r.payload)
        else:
            unclaimed.append(r)

    extra: list[GroundingRef] = []
    for r in unclaimed:
        slot = next((s for s in slots if s.concept and not s.has(r.payload.modality)), None)
        if slot is not None:
            slot.take(r.payload)
        else:
            extra.append(r.payload)

    it = iter(slots)

    def next_slot() -> _Slot:
        s = next(it)
        extra.extend(s.surplus_refs())
        return s

    entities = []
    for pe in meta.entities:
        s = next_slot()
        entities.append(EntityMention(pe.mention.surface, pe.mention.label, grounding=s.first_ref()))
    relations = []
    for pt in meta.triples:
        s_subj, s_obj = next_slot(), next_slot()
        relations.append(
            RelationTriple(
                subject=EntityMention(pt.subject.surface, pt.subject.label, grounding=s_subj.first_ref()),
                relation=pt.relation,
                object=EntityMention(pt.object.surface, pt.object.label, grounding=s_obj.first_ref()),
            )
        )
    events = []
    for pv in meta.events:
        s_trig = next_slot()
        args = []
        for arg in pv.event.arguments:
            s_arg = next_slot()
            args.append(EventArgument(mention=arg.mention, role=arg.role, grounding=s_arg.first_ref()))
        events.append(
            EventRecord(
                trigger=pv.event.trigger,
                event_type=pv.event.event_type,
                arguments=args,
                grounding=s_trig.first_ref(),
            )
        )

    return PredictionSet(
        instance_id=instance_id,
        task=meta.task,
        entities=entities,
        relations=relations,
        events=events,
        extra_groundings=extra,
    )
