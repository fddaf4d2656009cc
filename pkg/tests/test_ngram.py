"""Reference model: smoothing formula, backoff, tree evaluation, persistence."""

import numpy as np
import pytest

from specdec.draft import LinearDraft, linearize
from specdec.errors import InputError, StructureError
from specdec.ngram import fit_ngram
from specdec.trie import TriePool, retrieve_subtree


def test_bigram_counts_hand_checked():
    # two sequences share the bigram (1,2); continuations 3 and 4 once each
    model = fit_ngram([[1, 2, 3], [1, 2, 4]], order=2, alpha=1.0, vocab_size=5)
    dist = model.next_distribution([1, 2])
    assert dist[3] == pytest.approx(2 / 7)
    assert dist[4] == pytest.approx(2 / 7)
    assert dist[0] == pytest.approx(1 / 7)
    assert dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_empty_corpus_is_uniform():
    model = fit_ngram([], order=2, alpha=1.0, vocab_size=5)
    dist = model.next_distribution([3])
    np.testing.assert_allclose(dist, np.full(5, 0.2))


def test_small_alpha_approaches_empirical_frequency():
    model = fit_ngram([[1, 1, 1, 1]], order=2, alpha=1e-9, vocab_size=5)
    dist = model.next_distribution([1])
    assert dist[1] == pytest.approx(1.0, abs=1e-6)


def test_only_markov_window_conditions_output():
    model = fit_ngram([[1, 2, 3], [1, 2, 4]], order=2, alpha=1.0, vocab_size=5)
    np.testing.assert_array_equal(
        model.next_distribution([9, 1, 2]), model.next_distribution([1, 2])
    )


def test_unseen_context_is_uniform():
    model = fit_ngram([[1, 2, 3]], order=2, alpha=1.0, vocab_size=5)
    np.testing.assert_allclose(model.next_distribution([4]), np.full(5, 0.2))


def test_short_context_backs_off_to_shorter_table():
    model = fit_ngram([[1, 2, 3], [2, 2, 3]], order=3, alpha=1.0, vocab_size=4)
    # context of one token uses the unigram-context table, not the empty one
    dist = model.next_distribution([2])
    # count(2 -> 3) = 2, count(2 -> 2) = 1, total after-2 = 3
    assert dist[3] == pytest.approx((2 + 1) / (3 + 4))
    assert dist[2] == pytest.approx((1 + 1) / (3 + 4))
    empty = model.next_distribution([])
    # ()-table counts all 6 tokens: 1 x2, 2 x3? -> hand count: tokens 1,2,3,2,2,3
    assert empty[2] == pytest.approx((3 + 1) / (6 + 4))


def test_distribution_is_normalized_and_positive():
    rng = np.random.default_rng(7)
    corpus = [rng.integers(0, 20, size=rng.integers(2, 15)).tolist() for _ in range(30)]
    model = fit_ngram(corpus, order=3, alpha=0.5, vocab_size=20)
    for _ in range(50):
        ctx = rng.integers(0, 20, size=rng.integers(0, 6)).tolist()
        dist = model.next_distribution(ctx)
        assert abs(dist.sum() - 1.0) < 1e-9
        assert (dist > 0).all()


def test_fit_is_deterministic_on_probe_set():
    rng = np.random.default_rng(11)
    corpus = [rng.integers(0, 30, size=10).tolist() for _ in range(40)]
    a = fit_ngram(corpus, order=3, alpha=1.0, vocab_size=30)
    b = fit_ngram(corpus, order=3, alpha=1.0, vocab_size=30)
    for _ in range(25):
        ctx = rng.integers(0, 30, size=rng.integers(0, 5)).tolist()
        np.testing.assert_array_equal(a.next_distribution(ctx), b.next_distribution(ctx))


def test_token_out_of_range_names_sequence():
    with pytest.raises(InputError, match="sequence 1"):
        fit_ngram([[1, 2], [1, 7]], order=2, alpha=1.0, vocab_size=5)


def test_invalid_parameters():
    with pytest.raises(InputError):
        fit_ngram([[1]], order=0, alpha=1.0, vocab_size=5)
    with pytest.raises(InputError):
        fit_ngram([[1]], order=2, alpha=0.0, vocab_size=5)
    with pytest.raises(InputError):
        fit_ngram([[1]], order=2, alpha=1.0, vocab_size=0)


def _draft_from_sequences(sequences, prefix):
    pool = TriePool(vocab_size=64)
    for seq in sequences:
        pool.insert(seq)
    tree = retrieve_subtree(pool, None, prefix, 10**9)
    return linearize(tree)


def test_evaluate_tree_single_branch_matches_sequential():
    model = fit_ngram([[1, 2, 3, 4]], order=2, alpha=1.0, vocab_size=6)
    draft = _draft_from_sequences([[9, 2, 3]], [9])  # branch [2, 3]
    ctx = [1]
    out = model.evaluate_tree(ctx, draft)
    assert len(out) == 3
    np.testing.assert_array_equal(out[0], model.next_distribution([1]))
    np.testing.assert_array_equal(out[1], model.next_distribution([1, 2]))
    np.testing.assert_array_equal(out[2], model.next_distribution([1, 2, 3]))


def test_evaluate_tree_isolates_siblings():
    model = fit_ngram([[1, 2, 3], [1, 2, 4]], order=3, alpha=1.0, vocab_size=6)
    # branches [2, 3] and [2, 4]: node 4 must condition on [1, 2], never on 3
    draft = _draft_from_sequences([[9, 2, 3], [9, 2, 4]], [9])
    out = model.evaluate_tree([1], draft)
    assert draft.pseudo_sequence == [2, 3, 4]
    np.testing.assert_array_equal(out[2], model.next_distribution([1, 2, 3]))
    np.testing.assert_array_equal(out[3], model.next_distribution([1, 2, 4]))


def test_evaluate_tree_random_trees_bit_identical_to_sequential():
    rng = np.random.default_rng(3)
    corpus = [rng.integers(0, 16, size=12).tolist() for _ in range(25)]
    model = fit_ngram(corpus, order=3, alpha=1.0, vocab_size=16)
    for _ in range(40):
        sequences = [
            rng.integers(0, 16, size=rng.integers(2, 6)).tolist() for _ in range(4)
        ]
        prefix = [sequences[0][0]]
        pool = TriePool(vocab_size=16)
        for seq in sequences:
            pool.insert(seq)
        tree = retrieve_subtree(pool, None, prefix, 10)
        if tree is None:
            continue
        draft = linearize(tree)
        ctx = rng.integers(0, 16, size=4).tolist()
        out = model.evaluate_tree(ctx, draft)
        for i in range(len(draft.pseudo_sequence)):
            path = [
                draft.pseudo_sequence[j]
                for j in np.flatnonzero(draft.mask[i]).tolist()
            ]
            np.testing.assert_array_equal(out[i + 1], model.next_distribution(ctx + path))


def test_evaluate_tree_rejects_malformed_mask():
    model = fit_ngram([[1, 2]], order=2, alpha=1.0, vocab_size=6)
    mask = np.array([[True, False, False],
                     [True, True, False],
                     [False, True, True]])  # node 2 attends to sibling 1, not a chain
    bad = LinearDraft(pseudo_sequence=[2, 3, 4], mask=mask, positions=[0, 1, 1],
                      branch_index=[[0, 1], [0, 2]])
    with pytest.raises(StructureError):
        model.evaluate_tree([1], bad)


def test_evaluate_tree_rejects_inconsistent_positions():
    model = fit_ngram([[1, 2]], order=2, alpha=1.0, vocab_size=6)
    mask = np.array([[True, False], [True, True]])
    bad = LinearDraft(pseudo_sequence=[2, 3], mask=mask, positions=[0, 0],
                      branch_index=[[0, 1]])
    with pytest.raises(StructureError):
        model.evaluate_tree([1], bad)


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    corpus = [rng.integers(0, 12, size=8).tolist() for _ in range(15)]
    model = fit_ngram(corpus, order=3, alpha=0.7, vocab_size=12)
    path = tmp_path / "model.bin"
    model.save(str(path))
    from specdec.ngram import load_model

    loaded = load_model(str(path))
    assert loaded.order == model.order
    assert loaded.vocab_size == model.vocab_size
    assert loaded.alpha == model.alpha
    for _ in range(20):
        ctx = rng.integers(0, 12, size=rng.integers(0, 4)).tolist()
        np.testing.assert_array_equal(
            loaded.next_distribution(ctx), model.next_distribution(ctx)
        )
    assert loaded.to_bytes() == model.to_bytes()
