"""Acceptance policies and tree-branch verification.

Four per-token acceptance modes:

- ``greedy``: the draft token must equal the argmax of the model
  distribution (lossless; output identical to plain greedy decoding).
- ``topk``: the draft token must rank among the k most probable tokens.
- ``topp``: the draft token is the argmax, or its probability exceeds p.
- ``relaxed``: the draft token ranks in the top k AND its probability
  exceeds p.  The threshold exists to stop low-probability top-k tokens
  from driving generation off into divergence.

``relaxed`` is implemented literally: with k=1, p=0 it reduces exactly
to ``greedy``, and even an argmax token whose probability is <= p cuts
the branch.  The correction token at a cut is that same argmax, so the
emitted stream is unaffected by the cut, only the speculation depth is.

Branch verification walks every root-to-leaf branch of the draft; a
rejected node skips all its descendants.  The branch with the longest
accepted prefix wins (ties to the earliest branch in DFS order) and a
correction token is always emitted, taken from the distribution at the
first rejected position, or past the branch end when everything was
accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from specdec.draft import LinearDraft
from specdec.errors import InputError, StructureError

__all__ = ["VerificationPolicy", "VerificationOutcome", "accept_token", "verify_branches"]

_MODES = ("greedy", "topk", "topp", "relaxed")


@dataclass(frozen=True)
class VerificationPolicy:
    mode: str = "greedy"
    k: int = 2
    p: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise InputError(f"unknown verification mode {self.mode!r}; expected one of {_MODES}")
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if not 0 <= self.p < 1:
            raise InputError(f"p must be in [0, 1), got {self.p}")


@dataclass
class VerificationOutcome:
    accepted_tokens: list[int]
    correction_token: int
    accepted_branch: int | None

    @property
    def accepted_count(self) -> int:
        return len(self.accepted_tokens)


def _in_top_k(token: int, dist: np.ndarray, k: int) -> bool:
    # rank = number of tokens strictly better under (prob desc, id asc)
    prob = dist[token]
    rank = np.count_nonzero(dist > prob) + np.count_nonzero(dist[:token] == prob)
    return rank < k


def accept_token(token: int, dist: np.ndarray, policy: VerificationPolicy) -> bool:
    """Decide whether one draft token passes the policy against ``dist``."""
    if policy.mode == "greedy":
        return token == int(np.argmax(dist))
    if policy.mode == "topk":
        return _in_top_k(token, dist, policy.k)
    if policy.mode == "topp":
        return token == int(np.argmax(dist)) or dist[token] > policy.p
    # relaxed: both conditions
    return _in_top_k(token, dist, policy.k) and dist[token] > policy.p


def verify_branches(
    draft: LinearDraft,
    dists: Sequence[np.ndarray],
    policy: VerificationPolicy,
) -> VerificationOutcome:
    """Select the longest accepted branch and its correction token.

    ``dists`` must be indexed as produced by tree evaluation: index 0 is
    the post-context distribution and index i+1 conditions on node i's
    ancestor path inclusive, so node at branch depth j is checked
    against the distribution indexed by its predecessor on the branch.
    """
    n = len(draft.pseudo_sequence)
    if len(dists) != n + 1:
        raise StructureError(
            f"expected {n + 1} distributions for a {n}-node draft, got {len(dists)}"
        )
    if not draft.branch_index:
        raise InputError("draft has no branches")

    # Per-node accept decisions are branch-independent (a node's
    # conditioning distribution is fixed by its parent), so memoize.
    decision: list[bool | None] = [None] * n

    def accepted(node: int, dist_index: int) -> bool:
        if decision[node] is None:
            decision[node] = accept_token(
                draft.pseudo_sequence[node], dists[dist_index], policy
            )
        return decision[node]

    best_branch = 0
    best_len = -1
    for b, path in enumerate(draft.branch_index):
        length = 0
        for j, node in enumerate(path):
            dist_index = 0 if j == 0 else path[j - 1] + 1
            if not accepted(node, dist_index):
                break
            length += 1
        if length > best_len:
            best_len = length
            best_branch = b

    path = draft.branch_index[best_branch]
    accepted_tokens = [draft.pseudo_sequence[i] for i in path[:best_len]]
    if best_len == len(path):
        correction_dist = dists[path[-1] + 1]
    elif best_len == 0:
        correction_dist = dists[0]
    else:
        correction_dist = dists[path[best_len - 1] + 1]
    return VerificationOutcome(
        accepted_tokens=accepted_tokens,
        correction_token=int(np.argmax(correction_dist)),
        accepted_branch=best_branch if best_len > 0 else None,
    )
