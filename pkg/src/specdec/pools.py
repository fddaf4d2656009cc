"""Customized retrieval pool construction.

Entities are grouped two ways: collaborative groups cluster interaction
embeddings with seeded Lloyd k-means, and attribute groups partition a
general-to-specific attribute hierarchy, re-splitting any group above a
size threshold by the next attribute level.  A binary router decides
per entity which scheme applies; interaction-rich entities with an
embedding go collaborative, cold-start entities go by attributes.  Each
group's previously generated knowledge becomes one trie pool.

Embeddings are input data here (typically exported from an interaction
model); training them is out of scope.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from specdec.errors import InputError
from specdec.trie import DEFAULT_BRANCH_DEPTH, TriePool

__all__ = [
    "COLLABORATIVE",
    "ATTRIBUTE",
    "ROUTER_STRATEGIES",
    "EntityProfile",
    "Assignment",
    "KMeansResult",
    "kmeans_trace",
    "kmeans_cluster",
    "attribute_partition",
    "route",
    "assign_groups",
    "build_pools",
    "pool_key",
]

logger = logging.getLogger(__name__)

COLLABORATIVE = "collaborative"
ATTRIBUTE = "attribute"
ROUTER_STRATEGIES = ("default-threshold", "by-kind", "fixed-collaborative", "fixed-attribute")


@dataclass
class EntityProfile:
    entity_id: str
    kind: str  # "user" | "item"
    embedding: np.ndarray | None = None
    attributes: list[tuple[str, str]] = field(default_factory=list)
    interaction_count: int = 0
    old_knowledge: list[list[int]] = field(default_factory=list)


class Assignment(NamedTuple):
    scheme: str
    group_id: str


@dataclass
class KMeansResult:
    labels: list[int]
    centroids: np.ndarray
    objective_history: list[float]
    iterations: int


def kmeans_trace(
    embeddings: Sequence[Sequence[float]],
    num_groups: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> KMeansResult:
    """Seeded Lloyd k-means with squared-Euclidean assignment.

    Initial centroids are ``num_groups`` distinct input points sampled
    with the seed; assignment ties go to the lowest centroid index; an
    emptied cluster is reinitialized to the point farthest from its own
    centroid.  ``objective_history`` records the clustering objective
    after each assignment step and is non-increasing.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InputError("embeddings must be a non-empty list of equal-length vectors")
    n = points.shape[0]
    if num_groups < 1:
        raise InputError(f"num_groups must be >= 1, got {num_groups}")
    if num_groups > n:
        raise InputError(f"num_groups {num_groups} exceeds number of points {n}")

    rng = np.random.default_rng(seed)
    centroids = points[rng.choice(n, size=num_groups, replace=False)].copy()

    def assign(cents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d2 = ((points[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        return labels, d2[np.arange(n), labels]

    labels, dists = assign(centroids)
    history = [float(dists.sum())]
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        updated = centroids.copy()
        empty = []
        for j in range(num_groups):
            members = points[labels == j]
            if len(members):
                updated[j] = members.mean(axis=0)
            else:
                empty.append(j)
        if empty:
            spare = dists.copy()
            for j in empty:
                far = int(np.argmax(spare))
                updated[j] = points[far]
                spare[far] = -1.0
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        labels, dists = assign(centroids)
        history.append(float(dists.sum()))
        if shift < tol:
            break
    return KMeansResult(
        labels=[int(v) for v in labels],
        centroids=centroids,
        objective_history=history,
        iterations=iterations,
    )


def kmeans_cluster(
    embeddings: Sequence[Sequence[float]],
    num_groups: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> list[int]:
    """Per-entity group index from seeded k-means clustering."""
    return kmeans_trace(embeddings, num_groups, seed, max_iters, tol).labels


def attribute_partition(
    entities: Sequence[EntityProfile],
    size_threshold: int,
) -> dict[str, list[str]]:
    """Partition entities by attribute levels, splitting oversized groups.

    Groups by the first attribute level; any group larger than
    ``size_threshold`` is re-split by the next level, recursively, until
    under the threshold or the levels are exhausted.  Returns group id
    (the attribute-value path, e.g. ``"A/A1"``) to member entity ids.
    """
    if size_threshold < 1:
        raise InputError(f"size_threshold must be >= 1, got {size_threshold}")
    for entity in entities:
        if not entity.attributes:
            raise InputError(f"entity {entity.entity_id!r} has an empty attribute list")

    groups: dict[str, list[str]] = {}

    def split(members: list[EntityProfile], level: int, path: tuple[str, ...]) -> None:
        buckets: dict[str, list[EntityProfile]] = {}
        for entity in members:
            buckets.setdefault(entity.attributes[level][1], []).append(entity)
        for value in sorted(buckets):
            bucket = buckets[value]
            bucket_path = path + (value,)
            deeper = all(len(e.attributes) > level + 1 for e in bucket)
            if len(bucket) > size_threshold and deeper:
                split(bucket, level + 1, bucket_path)
            else:
                groups["/".join(bucket_path)] = [e.entity_id for e in bucket]

    split(list(entities), 0, ())
    return groups


def route(
    entity: EntityProfile,
    strategy: str = "default-threshold",
    interaction_threshold: int = 10,
) -> str:
    """Pick the retrieval pool scheme for one entity."""
    if strategy == "fixed-collaborative":
        return COLLABORATIVE
    if strategy == "fixed-attribute":
        return ATTRIBUTE
    if strategy == "by-kind":
        return COLLABORATIVE if entity.kind == "user" else ATTRIBUTE
    if strategy == "default-threshold":
        if entity.interaction_count >= interaction_threshold:
            if entity.embedding is None:
                logger.warning(
                    "entity %s has %d interactions but no embedding; "
                    "falling back to attribute pool",
                    entity.entity_id,
                    entity.interaction_count,
                )
                return ATTRIBUTE
            return COLLABORATIVE
        return ATTRIBUTE
    raise InputError(f"unknown router strategy {strategy!r}; expected one of {ROUTER_STRATEGIES}")


def assign_groups(
    entities: Sequence[EntityProfile],
    strategy: str = "default-threshold",
    interaction_threshold: int = 10,
    collaborative_groups: int = 3,
    attribute_size_threshold: int = 50,
    seed: int = 0,
) -> dict[str, Assignment]:
    """Route every entity and group each side: cluster or partition."""
    routed = {e.entity_id: route(e, strategy, interaction_threshold) for e in entities}
    collab = [e for e in entities if routed[e.entity_id] == COLLABORATIVE]
    attr = [e for e in entities if routed[e.entity_id] == ATTRIBUTE]

    assignments: dict[str, Assignment] = {}
    if collab:
        for entity in collab:
            if entity.embedding is None:
                raise InputError(
                    f"entity {entity.entity_id!r} routed to the collaborative "
                    "scheme but has no embedding"
                )
        g = min(collaborative_groups, len(collab))
        labels = kmeans_cluster([e.embedding for e in collab], g, seed=seed)
        for entity, label in zip(collab, labels):
            assignments[entity.entity_id] = Assignment(COLLABORATIVE, f"c{label}")
    if attr:
        for group_id, members in attribute_partition(attr, attribute_size_threshold).items():
            for entity_id in members:
                assignments[entity_id] = Assignment(ATTRIBUTE, group_id)
    return assignments


def pool_key(assignment: Assignment) -> str:
    scheme, group_id = assignment
    return f"{scheme}:{group_id}"


def build_pools(
    entities: Sequence[EntityProfile],
    assignments: dict[str, Assignment],
    vocab_size: int,
    max_pool_entries: int | None = None,
    seed: int = 0,
    max_branch_depth: int = DEFAULT_BRANCH_DEPTH,
) -> dict[str, TriePool]:
    """Build one trie pool per group from the members' old knowledge.

    With ``max_pool_entries`` set, each group's knowledge entries are
    uniformly subsampled with a seed derived from the group id, so the
    result is byte-reproducible regardless of iteration order.  A group
    whose members have no knowledge yields a valid empty pool.
    """
    texts: dict[str, list[list[int]]] = {}
    for entity in entities:
        assignment = assignments.get(entity.entity_id)
        if assignment is None:
            raise InputError(f"no group assignment for entity {entity.entity_id!r}")
        texts.setdefault(pool_key(assignment), []).extend(entity.old_knowledge)

    pools: dict[str, TriePool] = {}
    for key in sorted(texts):
        entries = texts[key]
        if max_pool_entries is not None and len(entries) > max_pool_entries:
            rng = np.random.default_rng([seed, zlib.crc32(key.encode("utf-8"))])
            picked = sorted(rng.choice(len(entries), size=max_pool_entries, replace=False))
            entries = [entries[i] for i in picked]
        pool = TriePool(group_id=key, vocab_size=vocab_size)
        for text in entries:
            pool.add_entry(text, max_branch_depth)
        pools[key] = pool
    return pools
