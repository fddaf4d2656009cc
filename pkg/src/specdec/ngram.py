"""Deterministic smoothed n-gram model standing in for the target LLM.

The decode engine only needs two capabilities from a target model:

  1. ``next_distribution(context)`` -- the conditional distribution over
     the vocabulary given a token context (one sequential step), and
  2. ``evaluate_tree(context, draft)`` -- distributions for every node of
     a linearized draft tree in a single call, where each node conditions
     only on its own ancestor path (tree attention).

An add-alpha smoothed n-gram model implements both exactly and
bit-reproducibly, which makes losslessness of the speculative decoder a
checkable equality rather than a statistical claim.  ``evaluate_tree``
reconstructs each node's ancestor path from the attention mask and
delegates to ``next_distribution``, so per-node outputs are identical to
the sequential path by construction; callers count one ``evaluate_tree``
call as one decoding step (the analogue of one parallel forward pass).

Argmax ties are broken toward the lowest token id everywhere in the
engine; ``numpy.argmax`` already does this.
"""

from __future__ import annotations

import struct
from collections import defaultdict
from typing import TYPE_CHECKING, Sequence

import numpy as np

from specdec.errors import DataError, InputError, StructureError

if TYPE_CHECKING:
    from specdec.draft import LinearDraft

__all__ = ["NGramModel", "fit_ngram", "load_model"]

_MAGIC = b"SDNG"
_FORMAT_VERSION = 1


class NGramModel:
    """Add-alpha smoothed n-gram model over integer token ids.

    ``P(t | ctx) = (count(ctx, t) + alpha) / (count(ctx) + alpha * V)``

    One count table is kept per context length 0..order-1; a context
    shorter than order-1 is served by the table of its own length
    (longest available suffix).  The model is immutable after fitting
    and safe for concurrent reads.
    """

    def __init__(self, order: int, vocab_size: int, alpha: float) -> None:
        if order < 1:
            raise InputError(f"order must be >= 1, got {order}")
        if vocab_size < 1:
            raise InputError(f"vocab_size must be >= 1, got {vocab_size}")
        if not alpha > 0:
            raise InputError(f"alpha must be > 0, got {alpha}")
        self.order = order
        self.vocab_size = vocab_size
        self.alpha = float(alpha)
        # tables[m]: context tuple of length m -> {token: count}
        self.tables: list[dict[tuple[int, ...], dict[int, int]]] = [
            {} for _ in range(order)
        ]
        self.totals: list[dict[tuple[int, ...], int]] = [{} for _ in range(order)]

    def next_distribution(self, context: Sequence[int]) -> np.ndarray:
        """Distribution over the vocabulary after ``context``.

        Only the last ``order - 1`` tokens condition the output; shorter
        contexts fall back to the matching shorter table.  The result is
        strictly positive and sums to 1 within float64 accumulation error.
        """
        m = min(len(context), self.order - 1)
        ctx = tuple(context[len(context) - m:]) if m else ()
        counts = self.tables[m].get(ctx)
        total = self.totals[m].get(ctx, 0)
        denom = total + self.alpha * self.vocab_size
        probs = np.full(self.vocab_size, self.alpha / denom, dtype=np.float64)
        if counts:
            for token, count in counts.items():
                probs[token] += count / denom
        return probs

    def evaluate_tree(self, context: Sequence[int], draft: "LinearDraft") -> list[np.ndarray]:
        """Distributions for the context and every draft node in one call.

        Output index 0 is the post-context distribution; output ``i + 1``
        conditions on ``context`` extended by node ``i``'s ancestor path
        (inclusive of node ``i``), reconstructed from the attention mask.
        Raises ``StructureError`` if the mask or positions are inconsistent.
        """
        tokens = draft.pseudo_sequence
        mask = np.asarray(draft.mask, dtype=bool)
        n = len(tokens)
        if mask.shape != (n, n):
            raise StructureError(
                f"mask shape {mask.shape} does not match pseudo-sequence length {n}"
            )
        if len(draft.positions) != n:
            raise StructureError(
                f"positions length {len(draft.positions)} != pseudo-sequence length {n}"
            )

        context = list(context)
        outputs = [self.next_distribution(context)]
        row_sets: list[frozenset[int]] = []
        for i in range(n):
            attended = frozenset(np.flatnonzero(mask[i]).tolist())
            if i not in attended:
                raise StructureError(f"node {i} does not attend to itself")
            proper = attended - {i}
            if any(j > i for j in proper):
                raise StructureError(f"node {i} attends to a later node")
            if proper:
                parent = max(proper)
                if row_sets[parent] != proper:
                    raise StructureError(
                        f"node {i} attends to non-ancestor nodes {sorted(proper)}"
                    )
            if draft.positions[i] != len(attended) - 1:
                raise StructureError(
                    f"positions[{i}] = {draft.positions[i]} but mask row has "
                    f"{len(attended)} attended nodes"
                )
            row_sets.append(attended)
            path = [tokens[j] for j in sorted(attended)]
            outputs.append(self.next_distribution(context + path))
        return outputs

    # -- persistence ----------------------------------------------------

    def to_bytes(self) -> bytes:
        """Serialize to the versioned binary count-table format."""
        out = bytearray()
        out += _MAGIC
        out += struct.pack("<IIId", _FORMAT_VERSION, self.order, self.vocab_size, self.alpha)
        for m in range(self.order):
            table = self.tables[m]
            out += struct.pack("<Q", len(table))
            for ctx in sorted(table):
                out += struct.pack(f"<{m}I", *ctx) if m else b""
                counts = table[ctx]
                out += struct.pack("<I", len(counts))
                for token in sorted(counts):
                    out += struct.pack("<IQ", token, counts[token])
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "NGramModel":
        if data[:4] != _MAGIC:
            raise DataError("not an n-gram model file (bad magic)")
        version, order, vocab_size = struct.unpack_from("<III", data, 4)
        if version != _FORMAT_VERSION:
            raise DataError(f"unsupported model format version {version}")
        (alpha,) = struct.unpack_from("<d", data, 16)
        model = cls(order, vocab_size, alpha)
        offset = 24
        for m in range(order):
            (n_contexts,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            for _ in range(n_contexts):
                ctx = struct.unpack_from(f"<{m}I", data, offset) if m else ()
                offset += 4 * m
                (n_pairs,) = struct.unpack_from("<I", data, offset)
                offset += 4
                counts: dict[int, int] = {}
                total = 0
                for _ in range(n_pairs):
                    token, count = struct.unpack_from("<IQ", data, offset)
                    offset += 12
                    counts[token] = count
                    total += count
                model.tables[m][tuple(ctx)] = counts
                model.totals[m][tuple(ctx)] = total
        return model

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


def fit_ngram(
    corpus: Sequence[Sequence[int]],
    order: int,
    alpha: float = 1.0,
    vocab_size: int = 0,
) -> NGramModel:
    """Fit an add-alpha n-gram model on token-id sequences.

    Counts every (context, next-token) occurrence for all context lengths
    0..order-1, so short supplied contexts condition on their longest
    available suffix.  Fitting is deterministic: the same corpus always
    yields a model with bit-identical distributions.
    """
    if vocab_size < 1:
        raise InputError(f"vocab_size must be >= 1, got {vocab_size}")
    model = NGramModel(order, vocab_size, alpha)
    tables = [defaultdict(lambda: defaultdict(int)) for _ in range(order)]
    for seq_index, seq in enumerate(corpus):
        for token in seq:
            if not 0 <= token < vocab_size:
                raise InputError(
                    f"token id {token} out of range [0, {vocab_size}) "
                    f"in corpus sequence {seq_index}"
                )
        for i, token in enumerate(seq):
            for m in range(min(i, order - 1) + 1):
                tables[m][tuple(seq[i - m:i])][token] += 1
    for m in range(order):
        for ctx, counts in tables[m].items():
            plain = dict(counts)
            model.tables[m][ctx] = plain
            model.totals[m][ctx] = sum(plain.values())
    return model


def load_model(path: str) -> NGramModel:
    with open(path, "rb") as fh:
        return NGramModel.from_bytes(fh.read())
