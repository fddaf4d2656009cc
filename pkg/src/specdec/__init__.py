"""Retrieval-based speculative decoding engine.

Draft-then-verify token generation against trie retrieval pools:
customized pool construction (embedding clustering and attribute
partition with a binary router), tree-structured drafting with
dynamic prefix backoff, greedy and relaxed verification, and a
benchmark harness over a deterministic n-gram reference model.
"""

from specdec.decode import (
    DecodeCounters,
    DecodeReport,
    DecodeSession,
    compute_metrics,
    decode_autoregressive,
    decode_speculative,
)
from specdec.draft import DraftParams, LinearDraft, linearize, retrieve_draft
from specdec.errors import ConfigError, DataError, InputError, SpecdecError, StructureError
from specdec.ngram import NGramModel, fit_ngram, load_model
from specdec.pools import (
    EntityProfile,
    assign_groups,
    attribute_partition,
    build_pools,
    kmeans_cluster,
    route,
)
from specdec.trie import (
    DraftTree,
    SessionOverlay,
    TrieNode,
    TriePool,
    drop_overlay,
    insert,
    load_pool,
    prune_top_frequency,
    retrieve_subtree,
)
from specdec.verify import VerificationOutcome, VerificationPolicy, accept_token, verify_branches

__version__ = "0.1.0"
