"""Knowledge records, corpus files, and synthetic corpus generation.

Corpora are JSON Lines: one knowledge record per line with integer
token arrays.  Unknown fields are ignored with a warning so older
readers keep working against newer files.

The synthetic generator builds a controlled stand-in for LLM-generated
recommendation knowledge: per-group template segments give texts within
a group real overlap, a per-record overlap rate controls how much of
each "new" text is reused from its "old" counterpart, and group
structure is encoded both in attributes and in embedding geometry
(group centroids plus noise) so clustering can recover it.  Fresh
(non-reused) content draws from a token range disjoint from templates,
which makes zero-overlap corpora genuinely retrieval-proof.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from specdec.errors import ConfigError, DataError, InputError
from specdec.pools import EntityProfile

__all__ = [
    "KnowledgeRecord",
    "read_records",
    "write_records",
    "read_token_sequences",
    "write_token_sequences",
    "entity_profile",
    "simulate_streaming_split",
    "generate_synthetic_corpus",
]

logger = logging.getLogger(__name__)

_RECORD_FIELDS = {
    "entity_id",
    "kind",
    "attributes",
    "interaction_count",
    "embedding",
    "prompt",
    "old_knowledge",
    "new_knowledge",
}


@dataclass
class KnowledgeRecord:
    entity_id: str
    kind: str = "user"
    attributes: list[tuple[str, str]] = field(default_factory=list)
    interaction_count: int = 0
    embedding: list[float] | None = None
    prompt: list[int] = field(default_factory=list)
    old_knowledge: list[list[int]] = field(default_factory=list)
    new_knowledge: list[int] | None = None

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "kind": self.kind,
            "attributes": [list(pair) for pair in self.attributes],
            "interaction_count": self.interaction_count,
            "embedding": self.embedding,
            "prompt": self.prompt,
            "old_knowledge": self.old_knowledge,
            "new_knowledge": self.new_knowledge,
        }


def _record_from_dict(raw: dict, line_no: int, warned: set[str]) -> KnowledgeRecord:
    unknown = set(raw) - _RECORD_FIELDS
    for name in sorted(unknown - warned):
        logger.warning("ignoring unknown corpus field %r (first seen on line %d)", name, line_no)
        warned.add(name)
    try:
        return KnowledgeRecord(
            entity_id=str(raw["entity_id"]),
            kind=raw.get("kind", "user"),
            attributes=[tuple(pair) for pair in raw.get("attributes", [])],
            interaction_count=int(raw.get("interaction_count", 0)),
            embedding=raw.get("embedding"),
            prompt=[int(t) for t in raw.get("prompt", [])],
            old_knowledge=[[int(t) for t in seq] for seq in raw.get("old_knowledge", [])],
            new_knowledge=(
                [int(t) for t in raw["new_knowledge"]]
                if raw.get("new_knowledge") is not None
                else None
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed record on line {line_no}: {exc}") from exc


def _check_tokens(record: KnowledgeRecord, vocab_size: int, line_no: int) -> None:
    streams = [record.prompt, *record.old_knowledge]
    if record.new_knowledge is not None:
        streams.append(record.new_knowledge)
    for stream in streams:
        for token in stream:
            if not 0 <= token < vocab_size:
                raise DataError(
                    f"token id {token} out of range [0, {vocab_size}) "
                    f"in record {record.entity_id!r} (line {line_no})"
                )


def read_records(path: str, vocab_size: int | None = None) -> list[KnowledgeRecord]:
    """Read a knowledge-record corpus; validates token range when given."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot open corpus file {path!r}: {exc}") from exc
    records = []
    warned: set[str] = set()
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON on line {line_no} of {path!r}: {exc}") from exc
            record = _record_from_dict(raw, line_no, warned)
            if vocab_size is not None:
                _check_tokens(record, vocab_size, line_no)
            records.append(record)
    return records


def write_records(path: str, records: Sequence[KnowledgeRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict()) + "\n")


def read_token_sequences(path: str) -> list[list[int]]:
    """Read plain token-sequence JSONL: one integer array per line."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot open sequence file {path!r}: {exc}") from exc
    sequences = []
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                seq = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON on line {line_no} of {path!r}: {exc}") from exc
            if not isinstance(seq, list) or any(
                not isinstance(t, int) or t < 0 for t in seq
            ):
                raise DataError(
                    f"line {line_no} of {path!r} is not an array of non-negative integers"
                )
            sequences.append(seq)
    return sequences


def write_token_sequences(path: str, sequences: Sequence[Sequence[int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(list(seq)) + "\n")


def entity_profile(record: KnowledgeRecord) -> EntityProfile:
    """View a knowledge record as a pool-builder entity."""
    return EntityProfile(
        entity_id=record.entity_id,
        kind=record.kind,
        embedding=None if record.embedding is None else np.asarray(record.embedding, dtype=np.float64),
        attributes=list(record.attributes),
        interaction_count=record.interaction_count,
        old_knowledge=record.old_knowledge,
    )


def simulate_streaming_split(history: Sequence[int], m: int) -> tuple[list[int], list[int]]:
    """Split a behavior sequence of length n into old and new segments.

    Old is the first m elements; new is the last m+1 elements, so the two
    segments overlap in the middle.  Requires n/2 < m < n.
    """
    n = len(history)
    if not (2 * m > n and m < n):
        raise InputError(f"m must satisfy n/2 < m < n; got m={m}, n={n}")
    return list(history[:m]), list(history[n - m - 1:])


def generate_synthetic_corpus(
    num_records: int,
    num_groups: int,
    overlap_rate: float,
    *,
    vocab_size: int = 512,
    templates_per_group: int = 6,
    shared_templates: int = 0,
    shared_rate: float = 0.3,
    segment_len: int = 12,
    segments_per_text: int = 8,
    old_texts_per_record: int = 1,
    prompt_len: int = 4,
    embedding_dim: int = 8,
    cold_start_fraction: float = 0.2,
    seed: int = 0,
) -> list[KnowledgeRecord]:
    """Generate a corpus with controlled old/new knowledge overlap.

    Token id 0 is reserved as end-of-sequence.  Each record's new text
    mirrors the slot structure of its first old text: a slot is reused
    verbatim with probability ``overlap_rate``, otherwise replaced with
    fresh tokens from a range disjoint from template content.  At rate
    1.0 the new text equals the old text exactly; at 0.0 they share no
    tokens at all.  With ``shared_templates`` set, slots draw a
    group-independent segment with probability ``shared_rate``, giving
    every group some common phrasing the way real knowledge texts do.
    Deterministic under the seed.
    """
    if num_records < 1:
        raise InputError(f"num_records must be >= 1, got {num_records}")
    if num_groups < 1 or num_groups > num_records:
        raise InputError(f"num_groups must be in [1, num_records], got {num_groups}")
    if not 0 <= overlap_rate <= 1:
        raise InputError(f"overlap_rate must be in [0, 1], got {overlap_rate}")
    if not 0 <= shared_rate <= 1:
        raise InputError(f"shared_rate must be in [0, 1], got {shared_rate}")
    if vocab_size < 64:
        raise InputError(f"vocab_size must be >= 64, got {vocab_size}")

    prompt_base = 1
    prompt_range = max(2, vocab_size // 8)
    template_base = prompt_base + prompt_range
    template_range = (vocab_size - template_base) // 2
    fresh_base = template_base + template_range
    fresh_range = vocab_size - fresh_base

    rng = np.random.default_rng(seed)

    def make_segment():
        return (template_base + rng.integers(0, template_range, size=segment_len)).tolist()

    templates = [
        [make_segment() for _ in range(templates_per_group)] for _ in range(num_groups)
    ]
    shared = [make_segment() for _ in range(shared_templates)]
    centroids = rng.normal(0.0, 10.0, size=(num_groups, embedding_dim))

    def draw_slot(group):
        if shared and rng.random() < shared_rate:
            return shared[int(rng.integers(0, len(shared)))]
        return templates[group][int(rng.integers(0, templates_per_group))]

    records = []
    for r in range(num_records):
        g = r % num_groups
        old_texts = []
        first_slots: list[list[int]] = []
        for j in range(old_texts_per_record):
            slots = [draw_slot(g) for _ in range(segments_per_text)]
            if j == 0:
                first_slots = slots
            old_texts.append([t for seg in slots for t in seg])

        new_segments = []
        for seg in first_slots:
            if rng.random() < overlap_rate:
                new_segments.append(seg)
            else:
                new_segments.append(
                    (fresh_base + rng.integers(0, fresh_range, size=segment_len)).tolist()
                )
        new_text = [t for seg in new_segments for t in seg]

        # big-endian so that prompts end with the fastest-varying digit,
        # keeping short n-gram contexts distinct across records
        digits = []
        value = r
        for _ in range(prompt_len):
            digits.append(prompt_base + value % prompt_range)
            value //= prompt_range
        digits.reverse()
        embedding = centroids[g] + rng.normal(0.0, 0.5, size=embedding_dim)
        cold = rng.random() < cold_start_fraction
        kind = "user" if r % 2 == 0 else "item"
        records.append(
            KnowledgeRecord(
                entity_id=f"{'u' if kind == 'user' else 'i'}{r:04d}",
                kind=kind,
                attributes=[("category", f"C{g}"), ("subcategory", f"C{g}S{r % 3}")],
                interaction_count=0 if cold else int(rng.integers(10, 101)),
                embedding=[float(v) for v in embedding],
                prompt=digits,
                old_knowledge=old_texts,
                new_knowledge=new_text,
            )
        )
    return records
