"""Command-line client for the decode service.

Every subcommand speaks the service's HTTP API.  Without ``--server``
the service app is mounted in-process over an ASGI transport, so batch
use needs no running daemon; with ``--server URL`` the same requests go
to a remote instance.  Exit codes: 0 success, 2 configuration error,
3 data error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from specdec import __version__


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config JSON file")
    parser.add_argument("--seed", type=int, help="override the config seed list")
    parser.add_argument("--output", help="output path")
    parser.add_argument("--policy", choices=["greedy", "topk", "topp", "relaxed"],
                        help="override the verification policy grid")
    parser.add_argument("--k", type=int, help="top-k for topk/relaxed policies")
    parser.add_argument("--p", type=float, help="probability threshold for topp/relaxed")
    parser.add_argument("--draft-max", type=int, help="maximum draft tokens per step")
    parser.add_argument("--pool-scheme", choices=["global", "customized", "random"],
                        help="override the pool scheme grid")
    parser.add_argument("--max-new-tokens", type=int, help="generation budget per record")
    parser.add_argument("--server", help="remote service URL (default: in-process)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specdec",
        description="Retrieval-based speculative decoding engine and benchmark harness",
    )
    parser.add_argument("--version", action="version", version=f"specdec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic knowledge corpus")
    _common_flags(synth)
    synth.add_argument("--records", type=int, required=True)
    synth.add_argument("--groups", type=int, required=True)
    synth.add_argument("--overlap", type=float, required=True,
                       help="old/new knowledge overlap rate in [0, 1]")
    synth.add_argument("--vocab-size", type=int, default=512)
    synth.add_argument("--templates-per-group", type=int, default=6)
    synth.add_argument("--shared-templates", type=int, default=0)
    synth.add_argument("--shared-rate", type=float, default=0.3)
    synth.add_argument("--segment-len", type=int, default=12)
    synth.add_argument("--segments-per-text", type=int, default=8)
    synth.add_argument("--old-texts-per-record", type=int, default=1)
    synth.add_argument("--embedding-dim", type=int, default=8)
    synth.add_argument("--cold-start-fraction", type=float, default=0.2)

    pools = sub.add_parser("build-pools", help="build retrieval pools from a corpus")
    _common_flags(pools)

    decode = sub.add_parser("decode", help="decode one record speculatively")
    _common_flags(decode)
    decode.add_argument("--record-id", help="entity id to decode (default: first record)")
    decode.add_argument("--baseline", action="store_true",
                        help="run the autoregressive baseline instead")

    bench = sub.add_parser("bench", help="run the experiment grid and write a report")
    _common_flags(bench)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _load_config(args: argparse.Namespace) -> dict:
    if not args.config:
        print("error: --config is required for this command", file=sys.stderr)
        raise SystemExit(2)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read config {args.config!r}: {exc}", file=sys.stderr)
        raise SystemExit(2)
    except json.JSONDecodeError as exc:
        print(f"error: config {args.config!r} is not valid JSON: {exc}", file=sys.stderr)
        raise SystemExit(2)
    if not isinstance(config, dict):
        print(f"error: config {args.config!r} must be a JSON object", file=sys.stderr)
        raise SystemExit(2)

    if args.seed is not None:
        config["seeds"] = [args.seed]
    if args.pool_scheme:
        config["schemes"] = [args.pool_scheme]
    if args.policy:
        policy = {"mode": args.policy}
        if args.k is not None:
            policy["k"] = args.k
        if args.p is not None:
            policy["p"] = args.p
        config["policies"] = [policy]
    if args.draft_max is not None:
        config.setdefault("draft", {})["max_draft_tokens"] = args.draft_max
    if args.max_new_tokens is not None:
        config["max_new_tokens"] = args.max_new_tokens
    return config


async def _post(args: argparse.Namespace, path: str, payload: dict) -> dict:
    if args.server:
        transport = None
        base_url = args.server
    else:
        from specdec.service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        base_url = "http://specdec.local"
    try:
        async with httpx.AsyncClient(
            transport=transport, base_url=base_url, timeout=None
        ) as client:
            response = await client.post(path, json=payload)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        raise SystemExit(2)

    if response.status_code == 200:
        return response.json()
    if response.status_code == 400:
        body = response.json()
        print(f"error: {body.get('message', response.text)}", file=sys.stderr)
        raise SystemExit(2 if body.get("error_type") == "config" else 3)
    if response.status_code == 422:
        print(f"error: invalid request: {response.text}", file=sys.stderr)
        raise SystemExit(2)
    print(f"error: service returned {response.status_code}: {response.text}",
          file=sys.stderr)
    raise SystemExit(1)


def _cmd_synth(args: argparse.Namespace) -> int:
    if not args.output:
        print("error: synth requires --output", file=sys.stderr)
        raise SystemExit(2)
    payload = {
        "num_records": args.records,
        "num_groups": args.groups,
        "overlap_rate": args.overlap,
        "vocab_size": args.vocab_size,
        "templates_per_group": args.templates_per_group,
        "shared_templates": args.shared_templates,
        "shared_rate": args.shared_rate,
        "segment_len": args.segment_len,
        "segments_per_text": args.segments_per_text,
        "old_texts_per_record": args.old_texts_per_record,
        "embedding_dim": args.embedding_dim,
        "cold_start_fraction": args.cold_start_fraction,
        "seed": args.seed if args.seed is not None else 0,
        "output": args.output,
    }
    body = asyncio.run(_post(args, "/synth", payload))
    print(f"wrote {body['num_records']} records to {body['output']}")
    return 0


def _cmd_build_pools(args: argparse.Namespace) -> int:
    config = _load_config(args)
    payload = {
        "config": config,
        "scheme": (args.pool_scheme or config.get("schemes", ["customized"])[0]),
        "size_cap": config.get("size_caps", [None])[0],
        "seed": config.get("seeds", [0])[0],
        "output_dir": args.output,
    }
    body = asyncio.run(_post(args, "/pools/build", payload))
    print(f"built {body['num_pools']} {body['scheme']} pools")
    for info in body["pools"]:
        location = f" -> {info['file']}" if info.get("file") else ""
        print(f"  {info['key']}: {info['size_entries']} entries, "
              f"{info['serialized_bytes']} bytes{location}")
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    payload = {
        "config": _load_config(args),
        "record_id": args.record_id,
        "baseline": args.baseline,
    }
    body = asyncio.run(_post(args, "/decode", payload))
    text = json.dumps(body, indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote decode result to {args.output}")
    else:
        print(text)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    payload = {"config": _load_config(args), "output": args.output}
    body = asyncio.run(_post(args, "/bench", payload))
    report = body["report"]
    base = report["baseline"]
    print(f"baseline: {base['tokens_generated']} tokens in {base['model_calls']} calls")
    for row in report["rows"]:
        metrics = row["metrics"]
        print(
            f"{row['scheme']:>10s} {row['policy']['mode']:>8s} cap={row['size_cap']} "
            f"calls/token={metrics['calls_per_token']['mean']:.3f} "
            f"aal={metrics['aal']['mean']:.2f} "
            f"art={metrics['art_seconds']['mean'] * 1e3:.3f}ms "
            f"speedup={metrics['speedup_vs_autoregressive']['mean']:.2f}x"
        )
    if body.get("output"):
        print(f"report written to {body['output']}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from specdec.service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "build-pools": _cmd_build_pools,
        "decode": _cmd_decode,
        "bench": _cmd_bench,
        "serve": _cmd_serve,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
