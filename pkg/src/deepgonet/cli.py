"""``deepgonet`` command line.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import NAMESPACES, NAMESPACE_SHORT, __version__
from .annotations import (
    aggregate_by_protein,
    build_dataset,
    filter_experimental,
    load_dataset,
    parse_annotation_table,
    parse_fasta,
    read_fasta,
    save_dataset,
)
from .config import RunConfig, apply_overrides, load_config
from .errors import ConfigError, InputError, NumericalError
from .inference import format_json, format_tsv, predict
from .metrics import evaluate
from .model import (
    DOMAIN_EPOCHS,
    ModelConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .ontology import load_obo, top_level_terms

log = logging.getLogger("deepgonet")

_NS_ALIASES = {**{v.lower(): k for k, v in NAMESPACE_SHORT.items()}, **{n: n for n in NAMESPACES}}

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "val_f1", "val_mcc", "lr")


def _namespace(value: str) -> str:
    try:
        return _NS_ALIASES[value.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"namespace must be one of BP, CC, MF or {', '.join(NAMESPACES)}") from None


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic:
        cfg.deterministic = True
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def cmd_inspect_ontology(args, cfg: RunConfig) -> int:
    graph = load_obo(args.obo)
    namespaces = NAMESPACES if args.namespace is None else (args.namespace,)
    counts = graph.namespace_counts()
    lines = [
        f"terms\t{len(graph)}",
        f"obsolete\t{graph.obsolete_count}",
        f"is_a_edges\t{graph.edge_count}",
        f"alt_ids\t{len(graph.aliases)}",
        "",
        "namespace\tterms\troot\ttop_level",
    ]
    dictionaries = []
    for ns in namespaces:
        if ns not in graph.roots:
            lines.append(f"{ns}\t{counts[ns]}\t-\t0")
            continue
        d = top_level_terms(graph, ns)
        dictionaries.append(d)
        lines.append(f"{ns}\t{counts[ns]}\t{graph.roots[ns]}\t{d.size}")
    for d in dictionaries:
        lines += ["", f"# top-level dictionary: {d.namespace}"]
        lines.append(d.to_tsv().rstrip("\n"))
    _write("\n".join(lines) + "\n", args.out)
    if args.dictionary_out:
        if len(dictionaries) != 1:
            raise ConfigError("--dictionary-out needs exactly one --namespace with a root")
        Path(args.dictionary_out).write_text(dictionaries[0].to_tsv())
    return 0


def cmd_build_dataset(args, cfg: RunConfig) -> int:
    if args.strict_evidence:
        cfg.use_strict_evidence()
    if args.max_len is not None:
        cfg.max_len = args.max_len
    alphabet = cfg.alphabet_obj
    counters: Counter = Counter()
    graph = load_obo(args.obo)
    dictionary = top_level_terms(graph, args.namespace)
    records = parse_annotation_table(Path(args.annotations).read_bytes(), cfg.columns, counters)
    kept = filter_experimental(records, cfg.whitelist)
    counters["not_experimental"] += len(records) - len(kept)
    aggregated = aggregate_by_protein(kept, graph, dictionary, counters)
    counters["proteins_annotated"] += len(aggregated)
    sequences = parse_fasta(Path(args.fasta).read_bytes(), alphabet, counters)
    dataset = build_dataset(aggregated, sequences, dictionary, cfg.max_len, alphabet, counters)
    save_dataset(dataset, args.out)
    manifest = dataset.manifest()
    manifest["whitelist"] = sorted(cfg.whitelist)
    manifest_path = args.manifest or f"{args.out}.manifest.json"
    Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d rows to %s", len(dataset), args.out)
    return 0


def _model_and_train_config(cfg: RunConfig, dataset) -> tuple[ModelConfig, TrainConfig]:
    model_kw = dict(cfg.model)
    for key, value in (("output_dim", dataset.dictionary.size), ("max_len", dataset.max_len),
                       ("alphabet_hash", dataset.alphabet_hash)):
        if key in model_kw and model_kw[key] != value:
            raise ConfigError(f"model.{key}={model_kw[key]} conflicts with the dataset ({value})")
        model_kw[key] = value
    train_kw = {"epochs": DOMAIN_EPOCHS[dataset.dictionary.namespace], "seed": cfg.seed,
                **cfg.train}
    return ModelConfig(**model_kw), TrainConfig(**train_kw)


def format_log(history: list[dict]) -> str:
    rows = ["\t".join(LOG_COLUMNS)]
    for e in history:
        rows.append("\t".join(str(e["epoch"]) if c == "epoch" else f"{e[c]:.10g}"
                              for c in LOG_COLUMNS))
    return "\n".join(rows) + "\n"


def cmd_train(args, cfg: RunConfig) -> int:
    for key, attr in (("epochs", "epochs"), ("learning_rate", "lr"), ("batch_size", "batch_size")):
        if getattr(args, attr) is not None:
            cfg.train[key] = getattr(args, attr)
    dataset = load_dataset(args.dataset)
    mcfg, tcfg = _model_and_train_config(cfg, dataset)
    model = build_model(mcfg, tcfg.seed)

    def progress(entry):
        log.info("epoch %d train %.5f val %.5f F1 %.4f MCC %.4f lr %.2g", entry["epoch"],
                 entry["train_loss"], entry["val_loss"], entry["val_f1"], entry["val_mcc"],
                 entry["lr"])

    ckpt = train(model, dataset, tcfg, on_epoch=progress)
    out = Path(args.out)
    save_checkpoint(ckpt, out)
    Path(args.log or f"{out}.log.tsv").write_text(format_log(ckpt.train_log))
    Path(f"{out}.config.json").write_text(cfg.to_json())
    if not args.no_figures and ckpt.train_log:
        from .plotting import plot_training_log
        short = NAMESPACE_SHORT[dataset.dictionary.namespace]
        plot_training_log(ckpt.train_log, f"{out}.png", f"{short} training")
    return 0


def _report_paths(out: str, thresholds: list[float]) -> list[Path]:
    path = Path(out)
    if len(thresholds) == 1:
        return [path]
    return [path.with_name(f"{path.stem}.t{t:.2f}{path.suffix}") for t in thresholds]


def cmd_evaluate(args, cfg: RunConfig) -> int:
    dataset = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.checkpoint, dictionary=dataset.dictionary)
    model = ckpt.to_model()
    thresholds = args.threshold or [0.5]
    for t, path in zip(thresholds, _report_paths(args.out, thresholds)):
        report = evaluate(model, dataset, t)
        path.write_text(report.to_text())
        if args.tsv:
            path.with_name(path.name + ".tsv").write_text(report.to_tsv())
        if args.json:
            path.with_name(path.name + ".json").write_text(report.to_json())
        if not args.no_figures:
            from .plotting import plot_label_scores
            plot_label_scores(report, path.with_name(path.name + ".png"))
        log.info("threshold %.2f: micro F1 %.4f MCC %.4f", t, report.f1, report.mcc)
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    records = read_fasta(Path(args.fasta).read_bytes())
    if not records:
        raise InputError(f"{args.fasta}: no FASTA records")
    # bad residues are kept here so they surface as per-sequence errors
    sequences = dict(records)
    preds = predict(ckpt, sequences, args.threshold, args.min_one, cfg.alphabet_obj)
    _write(format_json(preds) if args.json else format_tsv(preds), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                        help="single-threaded BLAS for bit-reproducible output")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--set", action="append", default=argparse.SUPPRESS,
                        metavar="KEY=VALUE", help="config override, e.g. train.epochs=5")

    parser = argparse.ArgumentParser(prog="deepgonet", parents=[common],
                                     description="Top-level GO term prediction from sequence.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect-ontology", parents=[common], help="summarise an OBO file")
    p.add_argument("obo")
    p.add_argument("--namespace", type=_namespace)
    p.add_argument("--out")
    p.add_argument("--dictionary-out", help="write index/term/name TSV for one namespace")
    p.set_defaults(func=cmd_inspect_ontology)

    p = sub.add_parser("build-dataset", parents=[common], help="OBO + annotations + FASTA -> dataset")
    p.add_argument("--obo", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--fasta", required=True)
    p.add_argument("--namespace", type=_namespace, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--max-len", type=int)
    p.add_argument("--strict-evidence", action="store_true",
                   help="EXP/IDA/IPI/IMP/IGI/IEP only (drop TAS and IC)")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", parents=[common], help="train one domain model")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--log", help="per-epoch TSV log (default: <out>.log.tsv)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--threshold", type=float, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--tsv", action="store_true")
    p.add_argument("--json", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="predict terms for FASTA sequences")
    p.add_argument("checkpoint")
    p.add_argument("fasta")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-one", action="store_true",
                   help="emit the best term when none clears the threshold")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("deterministic", False),
                          ("threads", None), ("quiet", False), ("set", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _resolve_config(args)
        threads = 1 if cfg.deterministic else cfg.threads
        limits = threadpool_limits(threads) if threads else contextlib.nullcontext()
        with limits:
            return args.func(args, cfg)
    except NumericalError as exc:
        print(f"deepgonet: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (InputError, OSError, UnicodeDecodeError) as exc:
        print(f"deepgonet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
