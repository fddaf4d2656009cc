"""Per-step draft production: prefix retrieval with backoff, then linearization.

Retrieval starts from a long recent-context prefix (high relevance) and
shortens it until the pool yields a substantial subtree; the retrieved
tree is then flattened into the pseudo-sequence, ancestor attention
mask, and position ids that a tree-masked model evaluation consumes.
Every branch of the tree is one candidate continuation; the mask keeps
sibling branches from seeing each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from specdec.errors import InputError
from specdec.trie import DraftTree, SessionOverlay, TriePool, retrieve_subtree

__all__ = ["DraftParams", "LinearDraft", "retrieve_draft", "linearize"]


@dataclass(frozen=True)
class DraftParams:
    """Knobs for draft retrieval.

    ``backoff_retry_fraction`` quantifies "significantly fewer than the
    draft budget": a retrieved subtree smaller than this fraction of
    ``max_draft_tokens`` triggers a retry with a shorter prefix.
    """

    max_draft_tokens: int = 32
    prefix_max: int = 4
    prefix_min: int = 1
    backoff_retry_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.max_draft_tokens < 1:
            raise InputError(f"max_draft_tokens must be >= 1, got {self.max_draft_tokens}")
        if not 1 <= self.prefix_min <= self.prefix_max:
            raise InputError(
                f"need 1 <= prefix_min <= prefix_max, got "
                f"{self.prefix_min}..{self.prefix_max}"
            )
        if not 0 < self.backoff_retry_fraction <= 1:
            raise InputError(
                f"backoff_retry_fraction must be in (0, 1], got {self.backoff_retry_fraction}"
            )


@dataclass
class LinearDraft:
    """DFS flattening of a draft tree for one tree-masked evaluation.

    - ``pseudo_sequence``: node tokens in DFS preorder.
    - ``mask``: boolean matrix; row i is true at column j iff node j is
      an ancestor of node i or j == i (lower-triangular under DFS order).
    - ``positions``: depth of each node, 0-based at the first draft level.
    - ``branch_index``: root-to-leaf paths as pseudo-sequence indices, in
      DFS order; each path is strictly increasing.
    """

    pseudo_sequence: list[int]
    mask: np.ndarray
    positions: list[int]
    branch_index: list[list[int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pseudo_sequence)


def retrieve_draft(
    pool: TriePool | None,
    overlay: SessionOverlay | None,
    context: Sequence[int],
    params: DraftParams,
) -> DraftTree | None:
    """Retrieve a draft tree for the current context, shortening the prefix as needed.

    Tries prefix lengths from ``prefix_max`` down to ``prefix_min`` and
    returns the first subtree holding at least ``backoff_retry_fraction *
    max_draft_tokens`` tokens.  If no length qualifies, the largest
    non-empty result wins (ties to the longer prefix); a miss at every
    length is a normal empty result.
    """
    if len(context) == 0:
        raise InputError("context must be non-empty")
    k = params.max_draft_tokens
    needed = params.backoff_retry_fraction * k
    best: DraftTree | None = None
    for n in range(min(params.prefix_max, len(context)), params.prefix_min - 1, -1):
        tree = retrieve_subtree(pool, overlay, context[len(context) - n:], k)
        if tree is None:
            continue
        if tree.node_count >= needed:
            return tree
        if best is None or tree.node_count > best.node_count:
            best = tree
    return best


def linearize(tree: DraftTree) -> LinearDraft:
    """Flatten a draft tree into pseudo-sequence, mask, and positions.

    DFS preorder with children visited in ascending token-id order, so
    identical trees always linearize identically.
    """
    if tree.is_empty():
        raise InputError("cannot linearize an empty draft tree")

    tokens: list[int] = []
    parents: list[int] = []
    depths: list[int] = []
    is_leaf: list[bool] = []
    stack = [
        (tree.root.children[t], -1, 0)
        for t in sorted(tree.root.children, reverse=True)
    ]
    while stack:
        node, parent, depth = stack.pop()
        index = len(tokens)
        tokens.append(node.token)
        parents.append(parent)
        depths.append(depth)
        is_leaf.append(not node.children)
        for t in sorted(node.children, reverse=True):
            stack.append((node.children[t], index, depth + 1))

    n = len(tokens)
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        if parents[i] >= 0:
            mask[i] = mask[parents[i]]
        mask[i, i] = True

    branches = []
    for i in range(n):
        if is_leaf[i]:
            path = []
            j = i
            while j >= 0:
                path.append(j)
                j = parents[j]
            branches.append(path[::-1])

    return LinearDraft(
        pseudo_sequence=tokens,
        mask=mask,
        positions=depths,
        branch_index=branches,
    )
