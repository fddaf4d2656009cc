"""Trie pool: insertion, retrieval vs brute-force oracle, pruning, overlays."""

import numpy as np
import pytest

from specdec.errors import InputError
from specdec.trie import (
    DraftTree,
    SessionOverlay,
    TrieNode,
    TriePool,
    drop_overlay,
    insert,
    prune_top_frequency,
    retrieve_subtree,
)


def subtree_to_dict(node):
    """(frequency, children) view of a trie for structural comparison."""
    return {
        token: (child.frequency, subtree_to_dict(child))
        for token, child in node.children.items()
    }


def oracle_subtree(sequences, prefix):
    """Brute-force construction: continuations of sequences led by the prefix,
    merged with multiplicity."""
    root = TrieNode(-1)
    matched = False
    for seq in sequences:
        if len(seq) >= len(prefix) and list(seq[: len(prefix)]) == list(prefix):
            matched = True
            node = root
            node.frequency += 1
            for token in seq[len(prefix):]:
                child = node.children.get(token)
                if child is None:
                    child = TrieNode(token)
                    node.children[token] = child
                child.frequency += 1
                node = child
    return root if matched else None


def test_insert_two_sequences_hand_counted():
    pool = TriePool()
    insert(pool, [1, 2, 3])
    insert(pool, [1, 2, 4])
    n1 = pool.permanent_root.children[1]
    n2 = n1.children[2]
    assert n1.frequency == 2
    assert n2.frequency == 2
    assert n2.children[3].frequency == 1
    assert n2.children[4].frequency == 1
    assert pool.size_entries == 2


def test_insert_same_sequence_twice_doubles_counts():
    pool = TriePool()
    insert(pool, [4, 5])
    insert(pool, [4, 5])
    n4 = pool.permanent_root.children[4]
    assert n4.frequency == 2
    assert n4.children[5].frequency == 2
    assert set(n4.children) == {5}


def test_insert_single_token():
    pool = TriePool()
    insert(pool, [7])
    assert set(pool.permanent_root.children) == {7}
    assert pool.permanent_root.children[7].frequency == 1


def test_insert_empty_sequence_rejected():
    pool = TriePool()
    with pytest.raises(InputError):
        insert(pool, [])
    overlay = SessionOverlay()
    with pytest.raises(InputError):
        insert(overlay, [])


def test_retrieve_simple_prefix():
    pool = TriePool()
    insert(pool, [1, 2, 3])
    insert(pool, [1, 2, 4])
    tree = retrieve_subtree(pool, None, [1, 2], 10)
    assert tree.node_count == 2
    assert subtree_to_dict(tree.root) == {3: (1, {}), 4: (1, {})}


def test_retrieve_missing_prefix_is_none():
    pool = TriePool()
    insert(pool, [1, 2, 3])
    assert retrieve_subtree(pool, None, [9, 9], 10) is None


def test_retrieve_merges_pool_and_overlay():
    pool = TriePool()
    insert(pool, [1, 2, 3])
    overlay = SessionOverlay()
    overlay.insert([1, 2, 5])
    tree = retrieve_subtree(pool, overlay, [1, 2], 10)
    assert subtree_to_dict(tree.root) == {3: (1, {}), 5: (1, {})}


def test_retrieve_sums_frequencies_on_shared_paths():
    pool = TriePool()
    insert(pool, [1, 2, 3])
    overlay = SessionOverlay()
    overlay.insert([1, 2, 3])
    tree = retrieve_subtree(pool, overlay, [1], 10)
    assert subtree_to_dict(tree.root) == {2: (2, {3: (2, {})})}


def test_retrieve_exhausted_prefix_is_none():
    # prefix matches but has no continuations
    pool = TriePool()
    insert(pool, [1, 2])
    assert retrieve_subtree(pool, None, [1, 2], 10) is None


def test_retrieve_validates_arguments():
    pool = TriePool()
    insert(pool, [1])
    with pytest.raises(InputError):
        retrieve_subtree(pool, None, [], 10)
    with pytest.raises(InputError):
        retrieve_subtree(pool, None, [1], 0)


def _tree(shape):
    """Build a DraftTree from {token: (freq, children_shape)}."""

    def grow(parent, node_shape):
        count = 0
        for token, (freq, children) in node_shape.items():
            node = TrieNode(token, freq)
            parent.children[token] = node
            count += 1 + grow(node, children)
        return count

    root = TrieNode(-1)
    return DraftTree(root, grow(root, shape))


def test_prune_respects_parent_constraint():
    tree = _tree({1: (5, {4: (5, {})}), 2: (2, {})})
    pruned = prune_top_frequency(tree, 2)
    assert subtree_to_dict(pruned.root) == {1: (5, {4: (5, {})})}


def test_prune_noop_when_small():
    tree = _tree({1: (3, {}), 2: (1, {})})
    assert prune_top_frequency(tree, 5) is tree


def test_prune_tie_breaks_to_lowest_token():
    tree = _tree({5: (1, {}), 2: (1, {}), 9: (1, {})})
    pruned = prune_top_frequency(tree, 1)
    assert subtree_to_dict(pruned.root) == {2: (1, {})}


def test_prune_tie_breaks_token_id_before_depth():
    tree = _tree({3: (2, {3: (1, {})}), 7: (1, {})})
    pruned = prune_top_frequency(tree, 2)
    # 3 (freq 2) first; then tie at freq 1 between inner 3 (depth 2) and 7
    # (depth 1): token id 3 < 7 wins before depth is consulted
    assert subtree_to_dict(pruned.root) == {3: (2, {3: (1, {})})}


def test_prune_tie_breaks_to_shallower_depth():
    # equal frequency and token id at different depths: shallower wins
    tree = _tree({3: (2, {5: (1, {})}), 5: (1, {})})
    pruned = prune_top_frequency(tree, 2)
    assert subtree_to_dict(pruned.root) == {3: (2, {}), 5: (1, {})}


def test_retrieve_cap_equals_materialize_then_prune():
    rng = np.random.default_rng(21)
    for _ in range(30):
        pool = TriePool()
        for _ in range(rng.integers(2, 30)):
            insert(pool, rng.integers(0, 6, size=rng.integers(1, 8)).tolist())
        prefix = rng.integers(0, 6, size=rng.integers(1, 3)).tolist()
        full = retrieve_subtree(pool, None, prefix, 10**9)
        capped = retrieve_subtree(pool, None, prefix, 4)
        if full is None:
            assert capped is None
            continue
        assert subtree_to_dict(capped.root) == subtree_to_dict(
            prune_top_frequency(full, 4).root
        )


def test_overlay_drop_restores_permanent_state():
    pool = TriePool()
    insert(pool, [1, 2, 3])
    before = pool.to_bytes()
    overlay = SessionOverlay(owner="s1")
    overlay.insert([8, 9])
    overlay.insert([1, 2, 7])
    assert retrieve_subtree(pool, overlay, [8], 10) is not None
    drop_overlay(overlay)
    assert retrieve_subtree(pool, overlay, [8], 10) is None
    tree = retrieve_subtree(pool, overlay, [1, 2], 10)
    assert subtree_to_dict(tree.root) == {3: (1, {})}
    assert pool.to_bytes() == before
    drop_overlay(overlay)  # dropping an empty overlay is a no-op


def test_oracle_equivalence_randomized():
    rng = np.random.default_rng(42)
    for _ in range(60):
        n_seqs = int(rng.integers(1, 40))
        sequences = [
            rng.integers(0, 5, size=rng.integers(1, 12)).tolist() for _ in range(n_seqs)
        ]
        pool = TriePool()
        for seq in sequences:
            insert(pool, seq)
        prefix = rng.integers(0, 5, size=rng.integers(1, 4)).tolist()
        got = retrieve_subtree(pool, None, prefix, 10**9)
        expected = oracle_subtree(sequences, prefix)
        if expected is None or not expected.children:
            assert got is None
        else:
            assert subtree_to_dict(got.root) == subtree_to_dict(expected)


def test_frequency_monotone_along_paths():
    rng = np.random.default_rng(13)
    pool = TriePool()
    for _ in range(200):
        insert(pool, rng.integers(0, 8, size=rng.integers(1, 10)).tolist())

    def check(node):
        for child in node.children.values():
            assert node.frequency >= child.frequency
            check(child)

    check(pool.permanent_root)


def test_suffix_entry_insertion():
    pool = TriePool()
    pool.add_entry([1, 2, 3], max_branch_depth=2)
    # suffixes truncated to depth 2: [1,2], [2,3], [3]
    assert subtree_to_dict(pool.permanent_root) == {
        1: (1, {2: (1, {})}),
        2: (1, {3: (1, {})}),
        3: (1, {}),
    }
    assert pool.size_entries == 1


def test_pool_serialization_round_trip():
    rng = np.random.default_rng(9)
    pool = TriePool(group_id="collaborative:c1", vocab_size=32)
    for _ in range(50):
        pool.add_entry(rng.integers(0, 32, size=rng.integers(1, 15)).tolist())
    data = pool.to_bytes()
    loaded = TriePool.from_bytes(data)
    assert loaded.group_id == pool.group_id
    assert loaded.vocab_size == pool.vocab_size
    assert loaded.size_entries == pool.size_entries
    assert subtree_to_dict(loaded.permanent_root) == subtree_to_dict(pool.permanent_root)
    assert loaded.to_bytes() == data


def test_pool_file_round_trip(tmp_path):
    from specdec.trie import load_pool

    pool = TriePool(group_id="g", vocab_size=8)
    insert(pool, [1, 2])
    path = tmp_path / "pool.trie"
    pool.save(str(path))
    assert load_pool(str(path)).to_bytes() == pool.to_bytes()
