"""Experiment harness: pool schemes, policy grids, and metric reports.

One experiment runs a grid of (pool scheme x pool size cap x policy)
points over a fixed corpus and seed list.  Per point, pools are built
per seed, every evaluation record is decoded speculatively, and the
aggregated counters are reported as mean and standard deviation over
seeds next to a single shared autoregressive baseline.

Pool schemes:

- ``global``: one pool holding every record's old knowledge.
- ``customized``: per-group pools from the binary router plus
  embedding clustering / attribute partition.
- ``random``: seeded uniform grouping into as many groups as the
  customized scheme produces, holding group count and total content
  comparable.

Reports are plot-ready JSON; wall-clock fields vary run to run, so
reproducibility checks compare token-stream digests and call counts.
"""

from __future__ import annotations

import gc
import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from specdec.corpus import KnowledgeRecord, entity_profile, read_records
from specdec.decode import (
    DecodeCounters,
    compute_metrics,
    run_autoregressive,
    run_speculative,
)
from specdec.draft import DraftParams
from specdec.errors import ConfigError, DataError, InputError
from specdec.ngram import fit_ngram
from specdec.pools import Assignment, assign_groups, build_pools, pool_key
from specdec.trie import DEFAULT_BRANCH_DEPTH, TriePool
from specdec.verify import VerificationPolicy

__all__ = ["ExperimentConfig", "run_experiment", "save_report", "build_scheme_pools"]

SCHEMA_VERSION = 1
POOL_SCHEMES = ("global", "customized", "random")


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description.

    Everything a run depends on is explicit here, and the resolved form
    is embedded in every report row, so a report is self-describing.
    """

    corpus: str
    vocab_size: int
    order: int = 3
    alpha: float = 1.0
    schemes: list[str] = field(default_factory=lambda: ["global"])
    policies: list[VerificationPolicy] = field(
        default_factory=lambda: [VerificationPolicy("greedy")]
    )
    size_caps: list[int | None] = field(default_factory=lambda: [None])
    router_strategy: str = "default-threshold"
    interaction_threshold: int = 10
    collaborative_groups: int = 3
    attribute_size_threshold: int = 50
    draft: DraftParams = field(default_factory=DraftParams)
    max_new_tokens: int = 64
    max_branch_depth: int = DEFAULT_BRANCH_DEPTH
    eos_id: int = 0
    seeds: list[int] = field(default_factory=lambda: [0])
    max_eval_records: int | None = None

    def __post_init__(self) -> None:
        if not self.schemes:
            raise ConfigError("schemes grid must be non-empty")
        for scheme in self.schemes:
            if scheme not in POOL_SCHEMES:
                raise ConfigError(
                    f"unknown pool scheme {scheme!r}; expected one of {POOL_SCHEMES}"
                )
        if not self.policies:
            raise ConfigError("policies grid must be non-empty")
        if not self.size_caps:
            raise ConfigError("size_caps grid must be non-empty")
        for cap in self.size_caps:
            if cap is not None and cap < 1:
                raise ConfigError(f"size_caps entries must be positive or null, got {cap}")
        if not self.seeds:
            raise ConfigError("seeds must be explicit and non-empty")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {
            "corpus", "vocab_size", "order", "alpha", "schemes", "policies",
            "size_caps", "router_strategy", "interaction_threshold",
            "collaborative_groups", "attribute_size_threshold", "draft",
            "max_new_tokens", "max_branch_depth", "eos_id", "seeds",
            "max_eval_records",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for required in ("corpus", "vocab_size"):
            if required not in raw:
                raise ConfigError(f"missing required config field {required!r}")
        data = dict(raw)
        try:
            if "policies" in data:
                data["policies"] = [
                    p if isinstance(p, VerificationPolicy) else VerificationPolicy(**p)
                    for p in data["policies"]
                ]
            if "draft" in data and not isinstance(data["draft"], DraftParams):
                data["draft"] = DraftParams(**data["draft"])
        except (InputError, TypeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        try:
            return cls(**data)
        except (InputError, TypeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus,
            "vocab_size": self.vocab_size,
            "order": self.order,
            "alpha": self.alpha,
            "schemes": list(self.schemes),
            "policies": [
                {"mode": p.mode, "k": p.k, "p": p.p} for p in self.policies
            ],
            "size_caps": list(self.size_caps),
            "router_strategy": self.router_strategy,
            "interaction_threshold": self.interaction_threshold,
            "collaborative_groups": self.collaborative_groups,
            "attribute_size_threshold": self.attribute_size_threshold,
            "draft": {
                "max_draft_tokens": self.draft.max_draft_tokens,
                "prefix_max": self.draft.prefix_max,
                "prefix_min": self.draft.prefix_min,
                "backoff_retry_fraction": self.draft.backoff_retry_fraction,
            },
            "max_new_tokens": self.max_new_tokens,
            "max_branch_depth": self.max_branch_depth,
            "eos_id": self.eos_id,
            "seeds": list(self.seeds),
            "max_eval_records": self.max_eval_records,
        }


def build_scheme_pools(
    records: Sequence[KnowledgeRecord],
    scheme: str,
    config: ExperimentConfig,
    size_cap: int | None,
    seed: int,
) -> tuple[dict[str, TriePool], dict[str, str]]:
    """Build pools for one scheme; returns (pools, record entity id -> pool key)."""
    entities = [entity_profile(r) for r in records]
    if scheme == "global":
        assignments = {e.entity_id: Assignment("global", "all") for e in entities}
    elif scheme == "customized":
        assignments = assign_groups(
            entities,
            strategy=config.router_strategy,
            interaction_threshold=config.interaction_threshold,
            collaborative_groups=config.collaborative_groups,
            attribute_size_threshold=config.attribute_size_threshold,
            seed=seed,
        )
    elif scheme == "random":
        customized = assign_groups(
            entities,
            strategy=config.router_strategy,
            interaction_threshold=config.interaction_threshold,
            collaborative_groups=config.collaborative_groups,
            attribute_size_threshold=config.attribute_size_threshold,
            seed=seed,
        )
        num_groups = len({pool_key(a) for a in customized.values()})
        rng = np.random.default_rng([seed, 1])
        labels = rng.integers(0, num_groups, size=len(entities))
        assignments = {
            e.entity_id: Assignment("random", f"r{label}")
            for e, label in zip(entities, labels)
        }
    else:
        raise ConfigError(f"unknown pool scheme {scheme!r}")
    pools = build_pools(
        entities,
        assignments,
        vocab_size=config.vocab_size,
        max_pool_entries=size_cap,
        seed=seed,
        max_branch_depth=config.max_branch_depth,
    )
    key_of = {eid: pool_key(a) for eid, a in assignments.items()}
    return pools, key_of


def _stream_digest(streams: Sequence[Sequence[int]]) -> str:
    return hashlib.sha256(json.dumps([list(s) for s in streams]).encode()).hexdigest()


def _mean_std(values: Sequence[float]) -> dict:
    present = [v for v in values if v is not None]
    if not present:
        return {"mean": 0.0, "std": 0.0}
    return {"mean": float(np.mean(present)), "std": float(np.std(present))}


def run_experiment(config: ExperimentConfig) -> dict:
    """Run the full grid and return the report document."""
    records = read_records(config.corpus, config.vocab_size)
    if not records:
        raise DataError(f"corpus {config.corpus!r} contains no records")
    for record in records:
        if not record.prompt:
            raise DataError(f"record {record.entity_id!r} has an empty prompt")
    eval_records = (
        records[: config.max_eval_records] if config.max_eval_records else records
    )

    fit_sequences = [
        list(r.prompt) + list(r.new_knowledge) + [config.eos_id]
        for r in records
        if r.new_knowledge
    ]
    if not fit_sequences:
        raise DataError("no records carry new-knowledge targets to fit the model on")
    model = fit_ngram(fit_sequences, config.order, config.alpha, config.vocab_size)

    base_totals = DecodeCounters()
    base_streams = []
    for record in eval_records:
        tokens, counters = run_autoregressive(
            model, record.prompt, config.max_new_tokens, config.eos_id
        )
        base_totals.merge(counters)
        base_streams.append(tokens)
    baseline_report = compute_metrics(base_totals)
    baseline = {
        "tokens_generated": base_totals.tokens_generated,
        "model_calls": base_totals.model_calls,
        "gen_speed_tokens_per_second": baseline_report.gen_speed_tokens_per_second,
        "wall_seconds": base_totals.wall_seconds,
        "stream_digest": _stream_digest(base_streams),
    }

    resolved = config.to_dict()
    rows = []
    for scheme in config.schemes:
        for cap in config.size_caps:
            pools_by_seed: dict[int, tuple[dict[str, TriePool], dict[str, str]]] = {}
            for policy in config.policies:
                seed_reports = []
                per_seed = []
                for seed in config.seeds:
                    if seed not in pools_by_seed:
                        pools_by_seed[seed] = build_scheme_pools(
                            records, scheme, config, cap, seed
                        )
                    # keep one row's allocation churn from skewing the next
                    # row's wall-clock retrieval timings
                    gc.collect()
                    pools, key_of = pools_by_seed[seed]
                    totals = DecodeCounters()
                    streams = []
                    for record in eval_records:
                        tokens, counters = run_speculative(
                            model,
                            pools.get(key_of[record.entity_id]),
                            record.prompt,
                            policy,
                            config.draft,
                            config.max_new_tokens,
                            config.eos_id,
                            config.max_branch_depth,
                        )
                        totals.merge(counters)
                        streams.append(tokens)
                    report = compute_metrics(
                        totals, baseline["gen_speed_tokens_per_second"]
                    )
                    seed_reports.append((report, totals))
                    per_seed.append(
                        {
                            "seed": seed,
                            "tokens_generated": totals.tokens_generated,
                            "model_calls": totals.model_calls,
                            "stream_digest": _stream_digest(streams),
                        }
                    )
                pools0, _ = pools_by_seed[config.seeds[0]]
                row_policy = {"mode": policy.mode, "k": policy.k, "p": policy.p}
                rows.append(
                    {
                        "scheme": scheme,
                        "policy": row_policy,
                        "size_cap": cap,
                        "num_pools": len(pools0),
                        "total_entries": sum(p.size_entries for p in pools0.values()),
                        "metrics": {
                            "tokens_generated": _mean_std(
                                [t.tokens_generated for _, t in seed_reports]
                            ),
                            "model_calls": _mean_std(
                                [t.model_calls for _, t in seed_reports]
                            ),
                            "calls_per_token": _mean_std(
                                [
                                    t.model_calls / t.tokens_generated
                                    for _, t in seed_reports
                                    if t.tokens_generated
                                ]
                            ),
                            "aal": _mean_std([r.aal for r, _ in seed_reports]),
                            "art_seconds": _mean_std(
                                [r.art_seconds for r, _ in seed_reports]
                            ),
                            "gen_speed_tokens_per_second": _mean_std(
                                [r.gen_speed_tokens_per_second for r, _ in seed_reports]
                            ),
                            "speedup_vs_autoregressive": _mean_std(
                                [r.speedup_vs_autoregressive for r, _ in seed_reports]
                            ),
                            "wall_seconds": _mean_std(
                                [r.wall_seconds for r, _ in seed_reports]
                            ),
                            "retrieval_time_ratio": _mean_std(
                                [
                                    t.retrieval_seconds / t.wall_seconds
                                    for _, t in seed_reports
                                    if t.wall_seconds > 0
                                ]
                            ),
                        },
                        "per_seed": per_seed,
                        "config": {
                            **resolved,
                            "scheme": scheme,
                            "policy": row_policy,
                            "size_cap": cap,
                        },
                    }
                )
    return {
        "schema_version": SCHEMA_VERSION,
        "config": resolved,
        "baseline": baseline,
        "rows": rows,
    }


def save_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
