"""Full decode loops: autoregressive baseline and draft-then-verify.

The speculative loop per step: retrieve a draft tree from the pool plus
the session overlay, linearize it, evaluate all nodes in one model call,
verify branches under the acceptance policy, and append the accepted
tokens plus the correction token.  A retrieval miss falls back to one
plain autoregressive step (a step with zero accepted drafts), so the
loop always makes progress and degenerates gracefully to the baseline.

The session overlay is seeded with the prompt and extended with freshly
generated content after every step; it is dropped when the session
ends, leaving the permanent pool untouched.

Model calls, not wall-clock, are the portable acceleration signal: one
``evaluate_tree`` call or one ``next_distribution`` call is one decoding
step.  Wall times are still collected (total, and retrieval separately)
for the throughput and retrieval-time metrics.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from specdec.draft import DraftParams, linearize, retrieve_draft
from specdec.errors import InputError
from specdec.ngram import NGramModel
from specdec.trie import DEFAULT_BRANCH_DEPTH, SessionOverlay, TriePool, drop_overlay
from specdec.verify import VerificationPolicy, verify_branches

__all__ = [
    "DecodeCounters",
    "DecodeReport",
    "DecodeSession",
    "decode_autoregressive",
    "decode_speculative",
    "run_autoregressive",
    "run_speculative",
    "compute_metrics",
]


@dataclass
class DecodeCounters:
    """Raw counters from one or more completed decode runs."""

    tokens_generated: int = 0
    model_calls: int = 0
    speculative_steps: int = 0
    accepted_draft_tokens: int = 0
    retrieval_seconds: float = 0.0
    wall_seconds: float = 0.0
    knowledge_count: int = 0

    def merge(self, other: "DecodeCounters") -> None:
        self.tokens_generated += other.tokens_generated
        self.model_calls += other.model_calls
        self.speculative_steps += other.speculative_steps
        self.accepted_draft_tokens += other.accepted_draft_tokens
        self.retrieval_seconds += other.retrieval_seconds
        self.wall_seconds += other.wall_seconds
        self.knowledge_count += other.knowledge_count


@dataclass
class DecodeReport:
    """Per-run metrics.

    ``aal`` counts accepted draft tokens per speculative step; the
    correction token is not a draft token and is excluded.  ``art_seconds``
    is mean retrieval time per generated knowledge text.  ``speedup`` is
    None when no baseline speed was supplied.
    """

    tokens_generated: int = 0
    model_calls: int = 0
    aal: float = 0.0
    art_seconds: float = 0.0
    gen_speed_tokens_per_second: float = 0.0
    speedup_vs_autoregressive: float | None = None
    wall_seconds: float = 0.0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "tokens_generated": self.tokens_generated,
            "model_calls": self.model_calls,
            "aal": self.aal,
            "art_seconds": self.art_seconds,
            "gen_speed_tokens_per_second": self.gen_speed_tokens_per_second,
            "speedup_vs_autoregressive": self.speedup_vs_autoregressive,
            "wall_seconds": self.wall_seconds,
            "degenerate": self.degenerate,
        }


def compute_metrics(
    counters: DecodeCounters,
    baseline_gen_speed: float | None = None,
) -> DecodeReport:
    """Derive the metric report from raw counters."""
    if counters.model_calls == 0:
        return DecodeReport(degenerate=True)
    aal = (
        counters.accepted_draft_tokens / counters.speculative_steps
        if counters.speculative_steps
        else 0.0
    )
    gen_speed = (
        counters.tokens_generated / counters.wall_seconds
        if counters.wall_seconds > 0
        else 0.0
    )
    speedup = None
    if baseline_gen_speed is not None and baseline_gen_speed > 0:
        speedup = gen_speed / baseline_gen_speed
    art = (
        counters.retrieval_seconds / counters.knowledge_count
        if counters.knowledge_count
        else 0.0
    )
    return DecodeReport(
        tokens_generated=counters.tokens_generated,
        model_calls=counters.model_calls,
        aal=aal,
        art_seconds=art,
        gen_speed_tokens_per_second=gen_speed,
        speedup_vs_autoregressive=speedup,
        wall_seconds=counters.wall_seconds,
    )


def run_autoregressive(
    model: NGramModel,
    prompt: Sequence[int],
    max_new_tokens: int,
    eos_id: int,
) -> tuple[list[int], DecodeCounters]:
    """Greedy one-token-per-call decoding, returning raw counters."""
    if len(prompt) == 0:
        raise InputError("prompt must be non-empty")
    context = list(prompt)
    generated: list[int] = []
    counters = DecodeCounters(knowledge_count=1)
    start = time.perf_counter()
    while len(generated) < max_new_tokens:
        dist = model.next_distribution(context)
        counters.model_calls += 1
        token = int(np.argmax(dist))
        generated.append(token)
        context.append(token)
        if token == eos_id:
            break
    counters.wall_seconds = time.perf_counter() - start
    counters.tokens_generated = len(generated)
    return generated, counters


def decode_autoregressive(
    model: NGramModel,
    prompt: Sequence[int],
    max_new_tokens: int,
    eos_id: int,
) -> tuple[list[int], DecodeReport]:
    """Greedy one-token-per-call decoding; the baseline."""
    tokens, counters = run_autoregressive(model, prompt, max_new_tokens, eos_id)
    return tokens, compute_metrics(counters)


@dataclass
class DecodeSession:
    """One speculative generation: shared model and pool, private overlay."""

    model: NGramModel
    pool: TriePool | None
    policy: VerificationPolicy
    params: DraftParams
    max_new_tokens: int
    eos_id: int
    max_branch_depth: int = DEFAULT_BRANCH_DEPTH
    overlay: SessionOverlay = field(default_factory=lambda: SessionOverlay(owner=""))
    context: list[int] = field(default_factory=list)
    generated: list[int] = field(default_factory=list)
    counters: DecodeCounters = field(default_factory=lambda: DecodeCounters(knowledge_count=1))
    finished: bool = False

    def start(self, prompt: Sequence[int]) -> None:
        if len(prompt) == 0:
            raise InputError("prompt must be non-empty")
        if not self.overlay.owner:
            self.overlay.owner = uuid.uuid4().hex
        self.context = list(prompt)
        self._extend_overlay(0)
        if self.max_new_tokens < 1:
            self.finished = True

    def step(self) -> list[int]:
        """Run one decoding step and return the tokens it emitted."""
        began = time.perf_counter()
        tree = retrieve_draft(self.pool, self.overlay, self.context, self.params)
        self.counters.retrieval_seconds += time.perf_counter() - began

        if tree is None:
            # retrieval miss: one plain autoregressive step
            dist = self.model.next_distribution(self.context)
            self.counters.model_calls += 1
            self.counters.speculative_steps += 1
            emitted = [int(np.argmax(dist))]
        else:
            draft = linearize(tree)
            dists = self.model.evaluate_tree(self.context, draft)
            self.counters.model_calls += 1
            self.counters.speculative_steps += 1
            outcome = verify_branches(draft, dists, self.policy)
            self.counters.accepted_draft_tokens += outcome.accepted_count
            emitted = outcome.accepted_tokens + [outcome.correction_token]

        if self.eos_id in emitted:
            emitted = emitted[: emitted.index(self.eos_id) + 1]
            self.finished = True

        prev_len = len(self.context)
        self.context.extend(emitted)
        self.generated.extend(emitted)
        self._extend_overlay(prev_len)
        if len(self.generated) >= self.max_new_tokens:
            self.finished = True
        return emitted

    def finish(self) -> list[int]:
        drop_overlay(self.overlay)
        # a step is atomic; overshoot past the budget is truncated post hoc
        if len(self.generated) > self.max_new_tokens:
            self.generated = self.generated[: self.max_new_tokens]
        self.counters.tokens_generated = len(self.generated)
        return self.generated

    def _extend_overlay(self, prev_len: int) -> None:
        """Insert depth-capped windows covering newly appended content.

        Windows anchored shortly before the new content are re-inserted
        so their branches extend into it.
        """
        depth = self.max_branch_depth
        text = self.context
        for start in range(max(0, prev_len - (depth - 1)), len(text)):
            self.overlay.insert(text[start:start + depth])


def run_speculative(
    model: NGramModel,
    pool: TriePool | None,
    prompt: Sequence[int],
    policy: VerificationPolicy,
    params: DraftParams,
    max_new_tokens: int,
    eos_id: int,
    max_branch_depth: int = DEFAULT_BRANCH_DEPTH,
) -> tuple[list[int], DecodeCounters]:
    """Draft-then-verify decoding, returning raw counters."""
    session = DecodeSession(
        model=model,
        pool=pool,
        policy=policy,
        params=params,
        max_new_tokens=max_new_tokens,
        eos_id=eos_id,
        max_branch_depth=max_branch_depth,
    )
    session.start(prompt)
    start = time.perf_counter()
    while not session.finished:
        session.step()
    session.counters.wall_seconds = time.perf_counter() - start
    tokens = session.finish()
    return tokens, session.counters


def decode_speculative(
    model: NGramModel,
    pool: TriePool | None,
    prompt: Sequence[int],
    policy: VerificationPolicy,
    params: DraftParams,
    max_new_tokens: int,
    eos_id: int,
    max_branch_depth: int = DEFAULT_BRANCH_DEPTH,
) -> tuple[list[int], DecodeReport]:
    """Draft-then-verify decoding against a retrieval pool.

    Under the greedy policy the emitted tokens are identical to
    ``decode_autoregressive`` for any pool content; the pool only
    changes how many tokens each model call yields.
    """
    tokens, counters = run_speculative(
        model, pool, prompt, policy, params, max_new_tokens, eos_id, max_branch_depth
    )
    return tokens, compute_metrics(counters)
