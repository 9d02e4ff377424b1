"""Command-line client for the pipeline service.

Every subcommand is a thin wrapper over one HTTP endpoint.  With
``--server URL`` the request goes to a running instance; without it an
in-process application handles the request, so the CLI works standalone.

Flag precedence: command-line flag > --config file > built-in default.
Any flag can also be supplied through the environment as LINKTOPICS_<NAME>
(e.g. LINKTOPICS_RANK=50).

Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

ENV_PREFIX = "LINKTOPICS_"

CONFIG_FLAGS = [
    # (dest, option strings, type)
    ("link_threshold", ["--link-threshold"], float),
    ("max_candidates", ["--max-candidates"], int),
    ("ngram_max", ["--ngram-max"], int),
    ("min_df", ["--min-df"], int),
    ("min_doc_links", ["--min-doc-links"], int),
    ("rank", ["--rank"], int),
    ("als_lambda", ["--als-lambda", "--lambda"], float),
    ("als_iterations", ["--als-iterations", "--iters"], int),
    ("als_seed", ["--als-seed", "--seed"], int),
    ("n_topics", ["--n-topics", "--k"], int),
    ("alpha", ["--alpha"], str),
    ("beta", ["--beta"], float),
    ("lda_iterations", ["--lda-iterations"], int),
    ("infer_iterations", ["--infer-iterations"], int),
    ("burn_in", ["--burn-in"], int),
    ("lda_seed", ["--lda-seed"], int),
    ("mask_fraction", ["--mask-fraction"], float),
    ("intruder_members", ["--intruder-members"], int),
    ("threads", ["--threads"], int),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for dest, options, type_ in CONFIG_FLAGS:
        env = os.environ.get(ENV_PREFIX + dest.upper())
        default = type_(env) if env is not None else None
        parser.add_argument(*options, dest=dest, type=type_, default=default)


def _collect_config(args: argparse.Namespace) -> dict:
    config: dict = {}
    if getattr(args, "config_file", None):
        with open(args.config_file, encoding="utf-8") as f:
            config.update(json.load(f))
    for dest, _options, _type in CONFIG_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            config[dest] = value
    if "alpha" in config and config["alpha"] != "auto":
        config["alpha"] = float(config["alpha"])
    if getattr(args, "deterministic", False):
        config["deterministic"] = True
        config["threads"] = 1
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linktopics",
        description="Crosslingual link-based topic modeling pipeline")
    parser.add_argument("--server", default=os.environ.get(
        ENV_PREFIX + "SERVER"),
        help="base URL of a running service; default runs in-process")
    parser.add_argument("--config", dest="config_file",
                        help="JSON config file (flags override it)")
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded reproducible mode")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("defaults", help="print the full default config")

    p = sub.add_parser("ingest", help="normalize a corpus to canonical form")
    p.add_argument("--source", required=True)
    p.add_argument("--redirects", required=True)
    p.add_argument("--sitelinks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lang")
    _add_config_flags(p)

    p = sub.add_parser("build-anchors", help="build an anchor dictionary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("build-adjacency", help="build the link matrix")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("factorize", help="ALS-decompose the link matrix")
    p.add_argument("--adjacency", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("densify", help="densify article bags of links")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--factor-model", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("train-lda", help="train the topic model")
    p.add_argument("--bags", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("infer", help="infer topic vectors for bags")
    p.add_argument("--model", dest="topic_model", required=True)
    p.add_argument("--in", dest="bags", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("eval-disambig",
                       help="masked-link disambiguation accuracy")
    p.add_argument("--adjacency", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("intruders", help="generate intruder tasks")
    p.add_argument("--model", dest="topic_model", required=True)
    p.add_argument("--out-tasks", required=True)
    p.add_argument("--out-answers", required=True)
    p.add_argument("--n-intruder-topics", type=int, required=True)
    _add_config_flags(p)

    p = sub.add_parser("lang-bias", help="per-language bias regression")
    p.add_argument("--vectors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-per-lang", type=int, required=True)
    _add_config_flags(p)

    p = sub.add_parser("distances", help="language distance matrix")
    p.add_argument("--vectors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["all", "common"], default="all")
    _add_config_flags(p)

    p = sub.add_parser("classify", help="supervised topic classification")
    p.add_argument("--train-vectors", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-vectors", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    return parser


def _request_body(args: argparse.Namespace) -> tuple[str, str, dict]:
    """Map a parsed subcommand to (method, endpoint, JSON body)."""
    config = _collect_config(args)
    cmd = args.subcommand
    if cmd == "defaults":
        return "GET", "/defaults", {}
    if cmd == "ingest":
        body = {"source": args.source, "redirects": args.redirects,
                "sitelinks": args.sitelinks, "out": args.out,
                "lang": args.lang}
    elif cmd == "build-anchors":
        body = {"corpus": args.corpus, "lang": args.lang, "out": args.out}
    elif cmd == "build-adjacency":
        body = {"corpus": args.corpus, "lang": args.lang, "out": args.out}
    elif cmd == "factorize":
        body = {"adjacency": args.adjacency, "out": args.out}
    elif cmd == "densify":
        body = {"corpus": args.corpus, "dictionary": args.dictionary,
                "factor_model": args.factor_model, "lang": args.lang,
                "out": args.out}
    elif cmd == "train-lda":
        body = {"bags": args.bags, "out": args.out}
    elif cmd == "infer":
        body = {"topic_model": args.topic_model, "bags": args.bags,
                "out": args.out}
    elif cmd == "eval-disambig":
        body = {"adjacency": args.adjacency, "dictionary": args.dictionary,
                "out": args.out}
    elif cmd == "intruders":
        body = {"topic_model": args.topic_model, "out_tasks": args.out_tasks,
                "out_answers": args.out_answers,
                "n_topics": args.n_intruder_topics}
    elif cmd == "lang-bias":
        body = {"vectors": args.vectors, "out": args.out,
                "sample_per_lang": args.sample_per_lang}
    elif cmd == "distances":
        body = {"vectors": args.vectors, "out": args.out, "mode": args.mode}
    elif cmd == "classify":
        body = {"train_vectors": args.train_vectors,
                "train_labels": args.train_labels,
                "test_vectors": args.test_vectors,
                "test_labels": args.test_labels, "out": args.out}
    else:  # pragma: no cover - argparse enforces the choices
        raise SystemExit(2)
    body["config"] = config
    return "POST", "/" + cmd, body


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=600.0)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    method, endpoint, body = _request_body(args)
    with _client(args.server) as client:
        if method == "GET":
            response = client.get(endpoint)
        else:
            response = client.post(endpoint, json=body)
    try:
        payload = response.json()
    except ValueError:
        payload = {"detail": response.text}
    print(json.dumps(payload, indent=2, sort_keys=True))
    if response.status_code < 400:
        return 0
    if response.status_code < 500:
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
