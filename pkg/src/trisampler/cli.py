"""Command-line surface: gen, index, sample, train, eval, compare.

Experiments are config-shaped: one JSON file with sections
{data, index, sampler, trainer, eval}, every field optional, plus
``--set path=value`` overrides for one-off tweaks. A single ``--seed``
fans out to the data/sampler/trainer/index seeds by stable hashing so one
number reproduces an entire experiment.

Exit codes: 0 success, 2 usage or config problem, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import (
    DataError,
    FormatError,
    load_embeddings,
    load_qrels,
    load_run,
    write_embeddings,
    write_qrels,
    write_run,
)
from .evaluation import (
    DEFAULT_MRR_CUTOFF,
    DEFAULT_RECALL_CUTOFF,
    compare_samplers,
    mrr_at_k,
    recall_at_k,
    retrieve_run,
)
from .index import APPROXIMATE, EXACT, build, recall_against_exact
from .rng import hash64
from .sampling import SamplerConfig, sample_all, write_negative_samples
from .synthetic import SyntheticSpec, generate_synthetic
from .training import DivergenceError, TrainerConfig, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_SECTION_KEYS = {
    "data": {"corpus", "queries", "qrels", "spec", "out_dir"},
    "index": {"mode", "n_clusters", "n_probe", "seed"},
    "sampler": set(SamplerConfig.__dataclass_fields__),
    "trainer": set(TrainerConfig.__dataclass_fields__) - {"sampler"},
    "eval": {"run", "mrr_cutoff", "recall_cutoff", "variants", "seeds", "out_csv"},
}


class ConfigError(ValueError):
    """Configuration problem the user must fix; maps to exit code 2."""


def _validate_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for section, content in raw.items():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be a JSON object")
        for key in content:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    spec = raw.get("data", {}).get("spec")
    if spec is not None:
        if not isinstance(spec, dict):
            raise ConfigError("data.spec must be a JSON object")
        known = set(SyntheticSpec.__dataclass_fields__)
        for key in spec:
            if key not in known:
                raise ConfigError(f"unknown config key data.spec.{key}")
    return raw


def _apply_overrides(config: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects path=value, got {item!r}")
        path, _, raw_value = item.partition("=")
        parts = path.split(".")
        if not all(parts):
            raise ConfigError(f"--set has an empty path segment: {item!r}")
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = config
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {path!r} crosses a non-object")
        node[parts[-1]] = value
    return config


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
    else:
        raw = {}
    raw = _apply_overrides(raw, args.set or [])
    raw = _validate_config(raw)
    if args.seed is not None:
        raw.setdefault("data", {}).setdefault("spec", {})
        raw["data"]["spec"]["seed"] = hash64(args.seed, "data")
        raw.setdefault("sampler", {})["seed"] = hash64(args.seed, "sampler")
        raw.setdefault("trainer", {})["seed"] = hash64(args.seed, "trainer")
        raw.setdefault("index", {})["seed"] = hash64(args.seed, "index")
    return raw


def _sampler_config(config: dict) -> SamplerConfig:
    try:
        return SamplerConfig.from_dict(config.get("sampler", {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"sampler: {exc}") from exc


def _trainer_config(config: dict) -> TrainerConfig:
    raw = dict(config.get("trainer", {}))
    raw["sampler"] = _sampler_config(config)
    try:
        return TrainerConfig.from_dict(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"trainer: {exc}") from exc


def _synthetic_spec(config: dict) -> SyntheticSpec:
    spec = config.get("data", {}).get("spec")
    if spec is None:
        raise ConfigError("data.spec is required for this command")
    try:
        return SyntheticSpec.from_dict(spec)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"data.spec: {exc}") from exc


def _load_dataset(config: dict):
    """Corpus, queries, and qrels from files, or synthesized from
    data.spec when paths are absent."""
    data = config.get("data", {})
    if data.get("corpus") and data.get("queries") and data.get("qrels"):
        corpus = load_embeddings(data["corpus"])
        queries = load_embeddings(data["queries"])
        qrels = load_qrels(data["qrels"])
        return corpus, queries, qrels
    if data.get("spec") is not None:
        return generate_synthetic(_synthetic_spec(config))
    raise ConfigError(
        "data needs either corpus+queries+qrels paths or a spec"
    )


def _out_dir(config: dict) -> Path:
    out = config.get("data", {}).get("out_dir", ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _build_index(config: dict, corpus):
    section = config.get("index", {})
    mode = section.get("mode", EXACT)
    if mode not in (EXACT, APPROXIMATE):
        raise ConfigError(f"index.mode must be 'exact' or 'approximate', got {mode!r}")
    return build(
        corpus,
        mode,
        n_clusters=section.get("n_clusters"),
        n_probe=section.get("n_probe"),
        seed=section.get("seed", 0),
    )


def cmd_gen(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{args.spec}: spec must be a JSON object")
    if args.seed is not None:
        raw["seed"] = hash64(args.seed, "data")
    try:
        spec = SyntheticSpec.from_dict(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{args.spec}: {exc}") from exc
    corpus, queries, qrels = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings(corpus, out / "corpus.emb")
    write_embeddings(queries, out / "queries.emb")
    write_qrels(qrels, out / "qrels.tsv")
    resolved = {f: getattr(spec, f) for f in SyntheticSpec.__dataclass_fields__}
    (out / "spec.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"wrote {corpus.count} docs, {queries.count} queries, "
        f"{len(qrels)} judged queries to {out}"
    )
    return EXIT_OK


def cmd_index(args) -> int:
    config = _load_config(args)
    data = config.get("data", {})
    if not data.get("corpus"):
        raise ConfigError("data.corpus is required for 'index'")
    corpus = load_embeddings(data["corpus"])
    index = _build_index(config, corpus)
    report = {
        "mode": index.mode,
        "epoch": index.epoch,
        "docs": corpus.count,
        "dim": corpus.dim,
    }
    if index.mode == APPROXIMATE and data.get("queries"):
        queries = load_embeddings(data["queries"])
        probe = queries.vectors[: min(50, queries.count)].astype(float)
        exact_index = build(corpus, EXACT)
        report["recall@100_vs_exact"] = recall_against_exact(
            index, exact_index, probe, min(100, corpus.count)
        )
    print(json.dumps(report, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_sample(args) -> int:
    config = _load_config(args)
    corpus, queries, qrels = _load_dataset(config)
    qrels.validate_against(corpus)
    sampler_config = _sampler_config(config)
    if sampler_config.effective_k > corpus.count:
        logger.warning(
            "candidate pool K=%d exceeds corpus size %d; pools will shrink",
            sampler_config.effective_k, corpus.count,
        )
    index = _build_index(config, corpus)
    samples = sample_all(index, queries, qrels, sampler_config)
    write_negative_samples(samples, args.out)
    fallbacks = sum(1 for s in samples if s.used_fallback)
    print(f"wrote {len(samples)} sample rows to {args.out} "
          f"({fallbacks} fallback activations)")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    corpus, queries, qrels = _load_dataset(config)
    trainer_config = _trainer_config(config)
    out = _out_dir(config)
    encoder, log = train(corpus, queries, qrels, trainer_config)
    log.write_jsonl(out / "train_log.jsonl")
    encoder.save(out / "encoder.npz")
    eval_section = config.get("eval", {})
    cutoff = max(
        eval_section.get("mrr_cutoff", DEFAULT_MRR_CUTOFF),
        eval_section.get("recall_cutoff", DEFAULT_RECALL_CUTOFF),
    )
    encoded_corpus = encoder.encoded_matrix(corpus, "doc")
    encoded_queries = encoder.encoded_matrix(queries, "query")
    run = retrieve_run(build(encoded_corpus, EXACT), encoded_queries, cutoff)
    write_run(run, out / "run.trec")
    last_loss = next(
        (r["loss"] for r in reversed(log.records) if r["loss"] is not None),
        None,
    )
    print(f"trained {trainer_config.steps} steps; final loss {last_loss}; "
          f"artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    eval_section = config.get("eval", {})
    if not eval_section.get("run"):
        raise ConfigError("eval.run is required for 'eval'")
    qrels_path = config.get("data", {}).get("qrels")
    if not qrels_path:
        raise ConfigError("data.qrels is required for 'eval'")
    run = load_run(eval_section["run"])
    qrels = load_qrels(qrels_path)
    mrr_cutoff = eval_section.get("mrr_cutoff", DEFAULT_MRR_CUTOFF)
    recall_cutoff = eval_section.get("recall_cutoff", DEFAULT_RECALL_CUTOFF)
    mrr = mrr_at_k(run, qrels, mrr_cutoff)
    recall = recall_at_k(run, qrels, recall_cutoff)
    metrics = {
        f"mrr@{mrr_cutoff}": mrr.aggregate,
        f"recall@{recall_cutoff}": recall.aggregate,
        "queries": mrr.query_count,
    }
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _load_config(args)
    spec = _synthetic_spec(config)
    base_sampler = _sampler_config(config)
    trainer_config = _trainer_config(config)
    eval_section = config.get("eval", {})
    variants = eval_section.get("variants", ["uniform", "trisampler"])
    if not isinstance(variants, list) or not variants:
        raise ConfigError("eval.variants must be a non-empty list")
    seeds = eval_section.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("eval.seeds must be a non-empty list")
    try:
        sampler_configs = [replace(base_sampler, variant=v) for v in variants]
    except ValueError as exc:
        raise ConfigError(f"eval.variants: {exc}") from exc
    result = compare_samplers(
        spec,
        sampler_configs,
        trainer_config,
        seeds,
        mrr_cutoff=eval_section.get("mrr_cutoff", DEFAULT_MRR_CUTOFF),
        recall_cutoff=eval_section.get("recall_cutoff", DEFAULT_RECALL_CUTOFF),
        threads=args.threads,
    )
    out_csv = eval_section.get("out_csv")
    if out_csv is None:
        out_csv = _out_dir(config) / "comparison.csv"
    result.write_csv(out_csv)
    print(result.format_table())
    print(f"wrote {out_csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trisampler",
        description="Triangular-region negative sampling workflows",
    )
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker pool cap for parallel sections (default 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="master seed, fanned out by stable hashing")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config value, e.g. sampler.n=10")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--spec", required=True, help="dataset spec JSON file")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(func=cmd_gen)

    for name, func, needs_out in (
        ("index", cmd_index, False),
        ("sample", cmd_sample, True),
        ("train", cmd_train, False),
        ("eval", cmd_eval, False),
        ("compare", cmd_compare, False),
    ):
        p = sub.add_parser(name, help=f"run the {name} workflow")
        p.add_argument("--config", required=True, help="experiment config JSON")
        if needs_out:
            p.add_argument("--out", required=True, help="output TSV path")
        add_common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
