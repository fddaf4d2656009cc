"""FastAPI service wrapping the decode engine.

Models and pools are expensive to build and immutable once built, so a
long-running service that caches them per corpus and serves decode and
benchmark requests from many clients is the natural deployment shape.
Fitted models and built pools are cached on (path, mtime) keys plus
their hyper-parameters; decode sessions are per-request and own their
overlays, so concurrent requests are safe.

Domain errors map to HTTP 400 with a body distinguishing configuration
problems from data problems; the CLI translates those to exit codes.
"""

from __future__ import annotations

import os
import re
import threading
from collections import OrderedDict
from typing import Callable, Hashable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from specdec import __version__
from specdec.bench import ExperimentConfig, build_scheme_pools, run_experiment, save_report
from specdec.corpus import (
    KnowledgeRecord,
    generate_synthetic_corpus,
    read_records,
    write_records,
)
from specdec.decode import compute_metrics, run_autoregressive, run_speculative
from specdec.errors import ConfigError, DataError, InputError
from specdec.ngram import NGramModel, fit_ngram
from specdec.service.schemas import (
    BenchRequest,
    BenchResponse,
    BuildPoolsRequest,
    BuildPoolsResponse,
    DecodeRequest,
    DecodeResponse,
    ErrorBody,
    HealthResponse,
    PolicyModel,
    PoolInfo,
    ReportModel,
    SynthRequest,
    SynthResponse,
)

_CACHE_SLOTS = 4


class _LruCache:
    """Tiny LRU; the lock also keeps concurrent requests from building
    the same model or pool set twice."""

    def __init__(self, maxsize: int = _CACHE_SLOTS) -> None:
        self.maxsize = maxsize
        self._entries: OrderedDict[Hashable, object] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: Hashable, factory: Callable[[], object]) -> object:
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                return self._entries[key]
            value = factory()
            self._entries[key] = value
            if len(self._entries) > self.maxsize:
                self._entries.popitem(last=False)
            return value


def _corpus_key(path: str) -> tuple:
    try:
        stat = os.stat(path)
    except OSError as exc:
        raise ConfigError(f"cannot open corpus file {path!r}: {exc}") from exc
    return (os.path.abspath(path), stat.st_mtime_ns, stat.st_size)


def _safe_filename(key: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", key)


def create_app() -> FastAPI:
    app = FastAPI(title="specdec", version=__version__)
    models = _LruCache()
    pools_cache = _LruCache()

    def load_corpus(config: ExperimentConfig) -> tuple[list[KnowledgeRecord], NGramModel]:
        key = _corpus_key(config.corpus) + (
            config.vocab_size, config.order, config.alpha, config.eos_id,
        )

        def build() -> tuple[list[KnowledgeRecord], NGramModel]:
            records = read_records(config.corpus, config.vocab_size)
            if not records:
                raise DataError(f"corpus {config.corpus!r} contains no records")
            sequences = [
                list(r.prompt) + list(r.new_knowledge) + [config.eos_id]
                for r in records
                if r.new_knowledge and r.prompt
            ]
            if not sequences:
                raise DataError("no records carry prompt and new-knowledge tokens")
            model = fit_ngram(sequences, config.order, config.alpha, config.vocab_size)
            return records, model

        return models.get(key, build)

    def load_pools(config: ExperimentConfig, scheme: str, cap: int | None, seed: int):
        key = _corpus_key(config.corpus) + (
            scheme, cap, seed, config.vocab_size, config.max_branch_depth,
            config.router_strategy, config.interaction_threshold,
            config.collaborative_groups, config.attribute_size_threshold,
        )
        records, _ = load_corpus(config)
        return pools_cache.get(
            key, lambda: build_scheme_pools(records, scheme, config, cap, seed)
        )

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error_type="config", message=str(exc)).model_dump(),
        )

    @app.exception_handler(DataError)
    async def _data_error(request: Request, exc: DataError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error_type="data", message=str(exc)).model_dump(),
        )

    @app.exception_handler(InputError)
    async def _input_error(request: Request, exc: InputError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error_type="config", message=str(exc)).model_dump(),
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(request: SynthRequest) -> SynthResponse:
        records = generate_synthetic_corpus(
            request.num_records,
            request.num_groups,
            request.overlap_rate,
            vocab_size=request.vocab_size,
            templates_per_group=request.templates_per_group,
            shared_templates=request.shared_templates,
            shared_rate=request.shared_rate,
            segment_len=request.segment_len,
            segments_per_text=request.segments_per_text,
            old_texts_per_record=request.old_texts_per_record,
            prompt_len=request.prompt_len,
            embedding_dim=request.embedding_dim,
            cold_start_fraction=request.cold_start_fraction,
            seed=request.seed,
        )
        if request.output:
            write_records(request.output, records)
            return SynthResponse(num_records=len(records), output=request.output)
        return SynthResponse(
            num_records=len(records), records=[r.to_dict() for r in records]
        )

    @app.post("/pools/build", response_model=BuildPoolsResponse)
    def build_pools_endpoint(request: BuildPoolsRequest) -> BuildPoolsResponse:
        config = request.config.to_config()
        pools, _ = load_pools(config, request.scheme, request.size_cap, request.seed)
        infos = []
        if request.output_dir:
            os.makedirs(request.output_dir, exist_ok=True)
        for key in sorted(pools):
            pool = pools[key]
            data = pool.to_bytes()
            file_path = None
            if request.output_dir:
                file_path = os.path.join(request.output_dir, _safe_filename(key) + ".trie")
                with open(file_path, "wb") as fh:
                    fh.write(data)
            infos.append(
                PoolInfo(
                    key=key,
                    size_entries=pool.size_entries,
                    serialized_bytes=len(data),
                    file=file_path,
                )
            )
        return BuildPoolsResponse(
            scheme=request.scheme,
            num_pools=len(pools),
            pools=infos,
            output_dir=request.output_dir,
        )

    @app.post("/decode", response_model=DecodeResponse)
    def decode(request: DecodeRequest) -> DecodeResponse:
        config = request.config.to_config()
        records, model = load_corpus(config)
        if request.record_id is None:
            record = records[0]
        else:
            matches = [r for r in records if r.entity_id == request.record_id]
            if not matches:
                raise DataError(f"record {request.record_id!r} not found in corpus")
            record = matches[0]
        if not record.prompt:
            raise DataError(f"record {record.entity_id!r} has an empty prompt")

        if request.baseline:
            tokens, counters = run_autoregressive(
                model, record.prompt, config.max_new_tokens, config.eos_id
            )
            report = compute_metrics(counters)
            return DecodeResponse(
                record_id=record.entity_id,
                baseline=True,
                tokens=tokens,
                report=ReportModel(**report.to_dict()),
            )

        scheme = config.schemes[0]
        policy = config.policies[0]
        pools, key_of = load_pools(config, scheme, config.size_caps[0], config.seeds[0])
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
        report = compute_metrics(counters)
        return DecodeResponse(
            record_id=record.entity_id,
            baseline=False,
            scheme=scheme,
            policy=PolicyModel(mode=policy.mode, k=policy.k, p=policy.p),
            tokens=tokens,
            report=ReportModel(**report.to_dict()),
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench(request: BenchRequest) -> BenchResponse:
        config = request.config.to_config()
        report = run_experiment(config)
        if request.output:
            save_report(report, request.output)
        return BenchResponse(output=request.output, report=report)

    return app


app = create_app()
