"""Frequency-annotated trie retrieval pool with session overlays.

A pool stores token sequences as root-anchored branches; every node
carries the number of stored sequences passing through it.  Knowledge
texts are inserted as all their suffixes (truncated to a branch-depth
cap) so that a recent-context prefix can match content anywhere inside
stored knowledge, not just at text starts.

Permanent pool content is immutable during decoding.  Per-session
content (the prompt and freshly generated tokens) lives in a
``SessionOverlay`` that is merged with the permanent trie at query time
and discarded when the session ends, which keeps the shared pool
read-only and concurrently shareable.

Subtree retrieval materializes the full merged subtree under the
matched prefix and then prunes it to the token budget by descending
frequency (ties: lower token id, then shallower depth).  Retrieval
cost is therefore proportional to the content stored beneath the
anchor, which is the quantity the pool-size benchmarks measure; a
budget-capped lazy merge would be output-equivalent but would hide
that cost.
"""

from __future__ import annotations

import heapq
import itertools
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from specdec.errors import DataError, InputError

__all__ = [
    "DEFAULT_BRANCH_DEPTH",
    "TrieNode",
    "TriePool",
    "SessionOverlay",
    "DraftTree",
    "insert",
    "retrieve_subtree",
    "prune_top_frequency",
    "drop_overlay",
    "load_pool",
]

DEFAULT_BRANCH_DEPTH = 64

_MAGIC = b"SDTP"
_FORMAT_VERSION = 1


class TrieNode:
    __slots__ = ("token", "frequency", "children")

    def __init__(self, token: int, frequency: int = 0) -> None:
        self.token = token
        self.frequency = frequency
        self.children: dict[int, TrieNode] = {}

    def __repr__(self) -> str:  # pragma: no cover
        return f"TrieNode(token={self.token}, freq={self.frequency}, children={len(self.children)})"


def _insert_path(root: TrieNode, sequence: Sequence[int]) -> None:
    if len(sequence) == 0:
        raise InputError("cannot insert an empty sequence")
    node = root
    node.frequency += 1
    for token in sequence:
        child = node.children.get(token)
        if child is None:
            child = TrieNode(token)
            node.children[token] = child
        child.frequency += 1
        node = child


def _walk(root: TrieNode, prefix: Sequence[int]) -> TrieNode | None:
    node = root
    for token in prefix:
        node = node.children.get(token)
        if node is None:
            return None
    return node


class TriePool:
    """Permanent retrieval pool for one entity group."""

    def __init__(self, group_id: str = "", vocab_size: int = 0) -> None:
        self.group_id = group_id
        self.vocab_size = vocab_size
        self.permanent_root = TrieNode(-1)
        self.size_entries = 0

    def insert(self, sequence: Sequence[int]) -> None:
        """Insert one sequence as a single root-anchored branch."""
        _insert_path(self.permanent_root, sequence)
        self.size_entries += 1

    def add_entry(self, text: Sequence[int], max_branch_depth: int = DEFAULT_BRANCH_DEPTH) -> None:
        """Insert one knowledge text as all its depth-capped suffixes."""
        if len(text) == 0:
            raise InputError("cannot add an empty knowledge text")
        for start in range(len(text)):
            _insert_path(self.permanent_root, text[start:start + max_branch_depth])
        self.size_entries += 1

    # -- persistence ----------------------------------------------------

    def to_bytes(self) -> bytes:
        gid = self.group_id.encode("utf-8")
        out = bytearray()
        out += _MAGIC
        out += struct.pack("<IH", _FORMAT_VERSION, len(gid))
        out += gid
        out += struct.pack("<II", self.vocab_size, self.size_entries)
        # preorder records, children in ascending token order (canonical form)
        stack = [self.permanent_root]
        while stack:
            node = stack.pop()
            out += struct.pack("<iQI", node.token, node.frequency, len(node.children))
            for token in sorted(node.children, reverse=True):
                stack.append(node.children[token])
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TriePool":
        if data[:4] != _MAGIC:
            raise DataError("not a trie pool file (bad magic)")
        version, gid_len = struct.unpack_from("<IH", data, 4)
        if version != _FORMAT_VERSION:
            raise DataError(f"unsupported pool format version {version}")
        offset = 10
        group_id = data[offset:offset + gid_len].decode("utf-8")
        offset += gid_len
        vocab_size, size_entries = struct.unpack_from("<II", data, offset)
        offset += 8
        pool = cls(group_id, vocab_size)
        pool.size_entries = size_entries

        token, frequency, n_children = struct.unpack_from("<iQI", data, offset)
        offset += 16
        pool.permanent_root.frequency = frequency
        stack = [(pool.permanent_root, n_children)]
        while stack:
            parent, remaining = stack[-1]
            if remaining == 0:
                stack.pop()
                continue
            stack[-1] = (parent, remaining - 1)
            token, frequency, n_children = struct.unpack_from("<iQI", data, offset)
            offset += 16
            node = TrieNode(token, frequency)
            parent.children[token] = node
            stack.append((node, n_children))
        return pool

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


def load_pool(path: str) -> TriePool:
    with open(path, "rb") as fh:
        return TriePool.from_bytes(fh.read())


class SessionOverlay:
    """Session-local temporary branches, merged with the pool at query time."""

    def __init__(self, owner: str = "") -> None:
        self.owner = owner
        self.temporary_root = TrieNode(-1)

    def insert(self, sequence: Sequence[int]) -> None:
        _insert_path(self.temporary_root, sequence)

    def clear(self) -> None:
        self.temporary_root = TrieNode(-1)


def insert(pool_or_overlay: TriePool | SessionOverlay, sequence: Sequence[int]) -> None:
    """Insert one sequence as a single branch into a pool or overlay."""
    pool_or_overlay.insert(sequence)


def drop_overlay(overlay: SessionOverlay) -> None:
    """Release all temporary branches; the permanent pool is untouched."""
    overlay.clear()


@dataclass
class DraftTree:
    """A retrieved subtree of candidate continuations.

    ``root`` is an anchor node (token -1) whose descendants are the
    draft tokens; ``node_count`` excludes the anchor.
    """

    root: TrieNode
    node_count: int = 0

    def is_empty(self) -> bool:
        return self.node_count == 0


def _best_first_merge(
    target_root: TrieNode,
    initial: Iterable[tuple[TrieNode, ...]],
    max_tokens: int,
) -> int:
    """Copy up to ``max_tokens`` nodes from merged sources, best first.

    Each heap entry carries the source nodes for one token (one node per
    source trie); frequencies are summed across sources.  A node enters
    the heap only once its parent has been retained, so the result is
    always a connected tree.
    """
    counter = itertools.count()
    heap: list[tuple[int, int, int, int, tuple[TrieNode, ...], TrieNode]] = []

    def push(sources: tuple[TrieNode, ...], depth: int, parent: TrieNode) -> None:
        freq = sum(s.frequency for s in sources)
        token = sources[0].token
        heapq.heappush(heap, (-freq, token, depth, next(counter), sources, parent))

    def merged_children(sources: tuple[TrieNode, ...]) -> dict[int, tuple[TrieNode, ...]]:
        merged: dict[int, list[TrieNode]] = {}
        for src in sources:
            for token, child in src.children.items():
                merged.setdefault(token, []).append(child)
        return {token: tuple(nodes) for token, nodes in merged.items()}

    for sources in initial:
        push(sources, 1, target_root)

    kept = 0
    while heap and kept < max_tokens:
        neg_freq, token, depth, _, sources, parent = heapq.heappop(heap)
        node = TrieNode(token, -neg_freq)
        parent.children[token] = node
        kept += 1
        for child_sources in merged_children(sources).values():
            push(child_sources, depth + 1, node)
    return kept


def retrieve_subtree(
    pool: TriePool | None,
    overlay: SessionOverlay | None,
    prefix: Sequence[int],
    max_tokens: int,
) -> DraftTree | None:
    """Retrieve the merged subtree anchored after ``prefix``.

    Matches the full prefix in the permanent trie and the overlay and
    copies the merged subtree below it, summing frequencies on shared
    paths; a result over ``max_tokens`` nodes is pruned by
    ``prune_top_frequency``.  Returns None when the prefix matches in
    neither tree or the matched position has no continuations.
    """
    if len(prefix) == 0:
        raise InputError("prefix must be non-empty")
    if max_tokens < 1:
        raise InputError(f"max_tokens must be >= 1, got {max_tokens}")

    anchors = []
    if pool is not None:
        node = _walk(pool.permanent_root, prefix)
        if node is not None:
            anchors.append(node)
    if overlay is not None:
        node = _walk(overlay.temporary_root, prefix)
        if node is not None:
            anchors.append(node)
    if not anchors:
        return None

    root = TrieNode(-1, sum(a.frequency for a in anchors))
    count = 0
    stack: list[tuple[tuple[TrieNode, ...], TrieNode]] = [(tuple(anchors), root)]
    while stack:
        sources, target = stack.pop()
        merged: dict[int, list[TrieNode]] = {}
        for src in sources:
            for token, child in src.children.items():
                merged.setdefault(token, []).append(child)
        for token, nodes in merged.items():
            copy = TrieNode(token, sum(n.frequency for n in nodes))
            target.children[token] = copy
            count += 1
            stack.append((tuple(nodes), copy))
    if count == 0:
        return None
    return prune_top_frequency(DraftTree(root, count), max_tokens)


def prune_top_frequency(tree: DraftTree, max_tokens: int) -> DraftTree:
    """Keep at most ``max_tokens`` nodes in descending frequency order.

    A node is retained only if its parent is retained, so the result is
    still a tree; ties break to the lower token id, then shallower depth.
    """
    if max_tokens < 1:
        raise InputError(f"max_tokens must be >= 1, got {max_tokens}")
    if tree.node_count <= max_tokens:
        return tree
    root = TrieNode(-1, tree.root.frequency)
    kept = _best_first_merge(
        root, ((child,) for child in tree.root.children.values()), max_tokens
    )
    return DraftTree(root, kept)
