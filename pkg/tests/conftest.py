import pytest

from specdec.corpus import generate_synthetic_corpus, write_records


@pytest.fixture
def small_corpus(tmp_path):
    """A small high-overlap corpus, written as JSONL; returns its path."""
    records = generate_synthetic_corpus(
        12, 2, overlap_rate=0.9,
        vocab_size=256, segments_per_text=3, segment_len=6,
        templates_per_group=4, embedding_dim=4, seed=5,
    )
    path = tmp_path / "corpus.jsonl"
    write_records(str(path), records)
    return str(path)
