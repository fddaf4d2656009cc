"""Request and response models for the decode service API."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from specdec.bench import ExperimentConfig
from specdec.errors import ConfigError


class PolicyModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: str = "greedy"
    k: int = 2
    p: float = 0.1


class DraftModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_draft_tokens: int = 32
    prefix_max: int = 4
    prefix_min: int = 1
    backoff_retry_fraction: float = 0.5


class ExperimentConfigModel(BaseModel):
    """Wire form of an experiment config; validated again on conversion."""

    model_config = ConfigDict(extra="forbid")

    corpus: str
    vocab_size: int
    order: int = 3
    alpha: float = 1.0
    schemes: list[str] = Field(default_factory=lambda: ["global"])
    policies: list[PolicyModel] = Field(default_factory=lambda: [PolicyModel()])
    size_caps: list[int | None] = Field(default_factory=lambda: [None])
    router_strategy: str = "default-threshold"
    interaction_threshold: int = 10
    collaborative_groups: int = 3
    attribute_size_threshold: int = 50
    draft: DraftModel = Field(default_factory=DraftModel)
    max_new_tokens: int = 64
    max_branch_depth: int = 64
    eos_id: int = 0
    seeds: list[int] = Field(default_factory=lambda: [0])
    max_eval_records: int | None = None

    def to_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.model_dump())

    @classmethod
    def from_file_dict(cls, raw: dict) -> "ExperimentConfigModel":
        try:
            return cls.model_validate(raw)
        except ValueError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


class ReportModel(BaseModel):
    tokens_generated: int
    model_calls: int
    aal: float
    art_seconds: float
    gen_speed_tokens_per_second: float
    speedup_vs_autoregressive: float | None = None
    wall_seconds: float
    degenerate: bool = False


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    num_records: int
    num_groups: int
    overlap_rate: float
    vocab_size: int = 512
    templates_per_group: int = 6
    shared_templates: int = 0
    shared_rate: float = 0.3
    segment_len: int = 12
    segments_per_text: int = 8
    old_texts_per_record: int = 1
    prompt_len: int = 4
    embedding_dim: int = 8
    cold_start_fraction: float = 0.2
    seed: int = 0
    output: str | None = None


class SynthResponse(BaseModel):
    num_records: int
    output: str | None = None
    records: list[dict] | None = None


class BuildPoolsRequest(BaseModel):
    config: ExperimentConfigModel
    scheme: str = "customized"
    size_cap: int | None = None
    seed: int = 0
    output_dir: str | None = None


class PoolInfo(BaseModel):
    key: str
    size_entries: int
    serialized_bytes: int
    file: str | None = None


class BuildPoolsResponse(BaseModel):
    scheme: str
    num_pools: int
    pools: list[PoolInfo]
    output_dir: str | None = None


class DecodeRequest(BaseModel):
    config: ExperimentConfigModel
    record_id: str | None = None
    baseline: bool = False


class DecodeResponse(BaseModel):
    record_id: str
    baseline: bool
    scheme: str | None = None
    policy: PolicyModel | None = None
    tokens: list[int]
    report: ReportModel


class BenchRequest(BaseModel):
    config: ExperimentConfigModel
    output: str | None = None


class BenchResponse(BaseModel):
    output: str | None = None
    report: dict


class ErrorBody(BaseModel):
    error_type: str  # "config" | "data"
    message: str
