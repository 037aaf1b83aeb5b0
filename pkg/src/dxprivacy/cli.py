"""Command-line interface.

    dxprivacy privatize    --table T --eta 100 --input corpus.txt --out priv.jsonl
    dxprivacy report geometry|deniability|inversion|examples --table T --eta 50 --eta 100 ... --out rep.json
    dxprivacy gen-pretrain --table T --eta 100 --input corpus.txt --out examples.jsonl
    dxprivacy probe        --table T --train train.tsv --eval dev.tsv --eta 100 --out probe.json

Every output embeds the run configuration and package version.  JSONL
outputs start with a ``{"meta": ...}`` line; CSV outputs start with a ``#``
comment line holding the same metadata.  Outputs are written to a temporary
file and renamed into place, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .analysis import (
    deniability_stats,
    geometry_profile,
    inversion_attack,
    perturbation_examples,
    stride_sample,
    to_csv,
    to_json,
)
from .embeddings import load_table
from .mechanism import PrivacyParams, privatize_sequence
from .mlm import generate_pretraining_examples
from .probe import ProbeConfig, eval_probe, load_tsv, train_probe
from .tokenizer import detokenize, tokenize

log = logging.getLogger("dxprivacy")

DEFAULT_ETAS = [50.0, 75.0, 100.0, 125.0, 150.0, 175.0]
DEFAULT_K = [1, 2, 3, 4, 5, 10, 20, 50, 100, 200, 500, 1000, 5000, 10000]


class CliError(Exception):
    pass


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not np.isfinite(v) or v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def _common(p: argparse.ArgumentParser, trials_default: int | None = None) -> None:
    p.add_argument("--table", required=True, help="embedding table file")
    p.add_argument("--format", choices=("text", "binary"), default="text", help="table file format")
    p.add_argument("--eta", type=_positive_float, action="append", help="privacy parameter (repeatable)")
    p.add_argument("--seed", type=_seed, default=0, help="master seed")
    if trials_default is not None:
        p.add_argument("--trials", type=_positive_int, default=trials_default, help="Monte Carlo trials")
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--workers", type=_positive_int, default=1, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dxprivacy", description="d_chi-privacy text privatization toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("privatize", help="text-to-text privatization of a corpus")
    _common(p)
    p.add_argument("--input", required=True, help="UTF-8 text, one document per line")
    p.add_argument("--max-len", type=_positive_int, default=128)
    p.add_argument("--candidates", choices=("regular", "all"), default="regular")

    rep = sub.add_parser("report", help="privacy reports")
    rsub = rep.add_subparsers(dest="report", required=True)
    g = rsub.add_parser("geometry", help="noise norm vs k-th neighbour distance")
    _common(g)
    g.add_argument("--k", type=_positive_int, action="append", help="neighbour rank (repeatable)")
    g.add_argument("--noise-samples", type=_positive_int, default=1000)
    g.add_argument("--closed-form", action="store_true", help="report n/eta instead of sampling")
    d = rsub.add_parser("deniability", help="N_w / S_w statistics")
    _common(d, trials_default=100)
    d.add_argument("--sample-size", type=_positive_int, help="stride-subsample this many regular tokens")
    i = rsub.add_parser("inversion", help="nearest-neighbour inversion attack")
    _common(i)
    i.add_argument("--input", required=True, help="UTF-8 text, one document per line (or TSV with --tsv)")
    i.add_argument("--tsv", action="store_true", help="input is label<TAB>text[<TAB>text2]")
    i.add_argument("--max-len", type=_positive_int, default=128)
    e = rsub.add_parser("examples", help="perturbed-text examples and output histograms")
    _common(e, trials_default=1000)
    e.add_argument("--text", required=True)
    e.add_argument("--top-k", type=_positive_int, default=10)

    gp = sub.add_parser("gen-pretrain", help="privatized masked-LM examples")
    _common(gp)
    gp.add_argument("--input", required=True, help="UTF-8 text, one sequence per line")
    gp.add_argument("--max-len", type=_positive_int, default=128)
    gp.add_argument("--mask-rate", type=_probability, default=0.15)
    gp.add_argument("--max-predictions", type=int, default=20)
    gp.add_argument("--prob-draws", type=int, default=10)
    gp.add_argument("--mode", choices=("text", "representation"), default="text")
    gp.add_argument("--epoch", type=int, default=0, help="trial index for the perturbation streams")

    pr = sub.add_parser("probe", help="linear utility probe over an (eta x mode x seed) grid")
    _common(pr)
    pr.add_argument("--train", required=True, help="training TSV")
    pr.add_argument("--eval", required=True, help="evaluation TSV")
    pr.add_argument("--mode", action="append", choices=("representation", "text"))
    pr.add_argument("--seeds", type=_positive_int, default=3, help="number of seeds (seed, seed+1, ...)")
    pr.add_argument("--epochs", type=_positive_int, default=ProbeConfig.epochs)
    pr.add_argument("--lr", type=_positive_float, default=ProbeConfig.learning_rate)
    pr.add_argument("--batch-size", type=_positive_int, default=ProbeConfig.batch_size)
    pr.add_argument("--clean-trained", action="store_true", help="also evaluate clean-trained probes on privatized input")
    pr.add_argument("--max-len", type=_positive_int, default=128)
    return parser


# ---------------------------------------------------------------------------
# output helpers


@contextlib.contextmanager
def _atomic_outputs(paths):
    """Yield temp paths; rename all into place on success, delete them on failure."""
    temps = []
    try:
        for path in paths:
            d = os.path.dirname(os.path.abspath(path))
            os.makedirs(d, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=d, prefix=".dxp-", suffix=".tmp")
            os.close(fd)
            temps.append(tmp)
        yield temps
    except BaseException:
        for tmp in temps:
            with contextlib.suppress(FileNotFoundError):
                os.remove(tmp)
        raise
    for tmp, path in zip(temps, paths):
        os.replace(tmp, path)


def _csv_path(out: str) -> str:
    root, ext = os.path.splitext(out)
    return (root if ext.lower() == ".json" else out) + ".csv"


def _meta(config: dict) -> dict:
    return {"config": config, "version": __version__}


def _write_report(out, config, payload, csv_text=None):
    paths = [out] + ([_csv_path(out)] if csv_text is not None else [])
    with _atomic_outputs(paths) as tmps:
        with open(tmps[0], "w", encoding="utf-8") as f:
            f.write(to_json({**_meta(config), "report": payload}))
        if csv_text is not None:
            with open(tmps[1], "w", encoding="utf-8") as f:
                f.write("# " + json.dumps(_meta(config), sort_keys=True) + "\n")
                f.write(csv_text)


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n").rstrip("\r") for line in f]


def _etas(args, single=False):
    etas = args.eta or DEFAULT_ETAS
    if single:
        if not args.eta or len(args.eta) != 1:
            raise CliError("exactly one --eta is required for this command")
    return etas


# ---------------------------------------------------------------------------
# commands


def cmd_privatize(args, config, table):
    eta = _etas(args, single=True)[0]
    params = PrivacyParams(eta, table.dim, args.seed)
    lines = _read_lines(args.input)
    with _atomic_outputs([args.out]) as (tmp,):
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(json.dumps({"meta": _meta(config)}, sort_keys=True) + "\n")
            for n, line in enumerate(lines):
                ids = tokenize(line, table, args.max_len)
                priv = privatize_sequence(ids, table, params, "text", f"privatize/{n}", 0, args.candidates)
                rec = {"line": n, "original_ids": ids, "privatized_ids": priv, "text": detokenize(priv, table)}
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    log.info("privatized %d lines", len(lines))


def cmd_geometry(args, config, table):
    n_reg = table.regular_ids.size
    ks = args.k or [k for k in DEFAULT_K if k <= n_reg - 1] + [n_reg - 1]
    ks = sorted(set(ks))
    rep = geometry_profile(table, _etas(args), ks, args.noise_samples, args.seed, args.closed_form, args.workers)
    _write_report(args.out, config, rep.to_dict(), rep.to_csv())


def cmd_deniability(args, config, table):
    subset = table.regular_ids
    if args.sample_size:
        subset = stride_sample(subset, args.sample_size)
    tokens = table.vocab.tokens
    reports, csv_rows = [], []
    for eta in _etas(args):
        rep = deniability_stats(table, PrivacyParams(eta, table.dim, args.seed), args.trials, subset, args.workers)
        reports.append(rep.to_dict(tokens))
        csv_rows.extend(rep.csv_rows(tokens))
    _write_report(args.out, config, reports, to_csv(("eta", "token_id", "token", "n_w", "s_w"), csv_rows))


def _load_corpus(args, table):
    lines = _read_lines(args.input)
    corpus = []
    for line in lines:
        if args.tsv:
            cols = line.split("\t")
            corpus.extend(tokenize(c, table, args.max_len) for c in cols[1:])
        else:
            corpus.append(tokenize(line, table, args.max_len))
    return corpus


def cmd_inversion(args, config, table):
    corpus = _load_corpus(args, table)
    reports, rows = [], []
    for eta in _etas(args):
        rep = inversion_attack(corpus, table, PrivacyParams(eta, table.dim, args.seed), workers=args.workers)
        reports.append(rep.to_dict(table.vocab.tokens))
        rows.append((eta, rep.accuracy, rep.standard_error, rep.correct, rep.total))
    _write_report(args.out, config, reports, to_csv(("eta", "accuracy", "standard_error", "correct", "total"), rows))


def cmd_examples(args, config, table):
    ids = tokenize(args.text, table)
    rows = perturbation_examples(ids, table, _etas(args), args.trials, args.seed, args.top_k)
    tok = table.vocab.tokens
    payload = {
        "original": [tok[i] for i in ids],
        "rows": [
            {
                "eta": r.eta,
                "privatized": [tok[i] for i in r.privatized_ids],
                "text": detokenize(r.privatized_ids, table),
                "histograms": [[[tok[t], c] for t, c in h] for h in r.histograms],
                "distinct": r.distinct,
            }
            for r in rows
        ],
    }
    csv_rows = []
    for r in rows:
        for pos, hist in enumerate(r.histograms):
            for rank, (t, c) in enumerate(hist):
                csv_rows.append((r.eta, pos, tok[ids[pos]], rank + 1, tok[t], c))
    _write_report(args.out, config, payload, to_csv(("eta", "position", "original", "rank", "output", "count"), csv_rows))
    for r in rows:
        print(f"{r.eta:g}\t{detokenize(r.privatized_ids, table)}")


def cmd_gen_pretrain(args, config, table):
    eta = _etas(args, single=True)[0]
    params = PrivacyParams(eta, table.dim, args.seed)
    corpus = [tokenize(line, table, args.max_len) for line in _read_lines(args.input)]
    if not corpus:
        raise CliError("input corpus is empty")
    if args.max_predictions < 0 or args.prob_draws < 0 or args.epoch < 0:
        raise CliError("--max-predictions, --prob-draws and --epoch must be non-negative")
    examples = generate_pretraining_examples(
        corpus, table, params, args.mask_rate, args.max_predictions, args.prob_draws, args.mode, args.epoch
    )
    with _atomic_outputs([args.out]) as (tmp,):
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(json.dumps({"meta": _meta(config)}, sort_keys=True) + "\n")
            for ex in examples:
                f.write(ex.to_json() + "\n")


def _se(acc: float, n: int) -> float:
    return float(np.sqrt(acc * (1.0 - acc) / n))


def cmd_probe(args, config, table):
    train = load_tsv(args.train, table, args.max_len)
    dev = load_tsv(args.eval, table, args.max_len)
    modes = args.mode or ["representation", "text"]
    seeds = [args.seed + i for i in range(args.seeds)]

    def cfg(seed):
        return ProbeConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=seed)

    def row(eta, train_mode, eval_mode, seed, acc):
        return {
            "eta": eta,
            "train_privatization": train_mode,
            "eval_privatization": eval_mode,
            "seed": seed,
            "accuracy": acc,
            "standard_error": _se(acc, len(dev)),
            "n_eval": len(dev),
        }

    baseline, rows, clean_rows = [], [], []
    clean_models = {}
    for seed in seeds:
        m = train_probe(train, table, "none", None, cfg(seed))
        clean_models[seed] = m
        baseline.append(row(None, "none", "none", seed, eval_probe(m, dev, table)))
    for eta in _etas(args):
        for mode in modes:
            for seed in seeds:
                params = PrivacyParams(eta, table.dim, seed)
                m = train_probe(train, table, mode, params, cfg(seed))
                rows.append(row(eta, mode, mode, seed, eval_probe(m, dev, table, mode, params)))
                if args.clean_trained:
                    acc = eval_probe(clean_models[seed], dev, table, mode, params)
                    clean_rows.append(row(eta, "none", mode, seed, acc))
                log.info("eta=%g mode=%s seed=%d acc=%.4f", eta, mode, seed, rows[-1]["accuracy"])
    payload = {
        "rows": rows,
        "baseline": baseline,
        "clean_trained": clean_rows,
        "summary": summarize(baseline + rows + clean_rows),
    }
    csv_rows = [
        (r["eta"] if r["eta"] is not None else "", r["train_privatization"], r["eval_privatization"], r["seed"],
         r["accuracy"], r["standard_error"])
        for r in baseline + rows + clean_rows
    ]
    _write_report(
        args.out, config, payload,
        to_csv(("eta", "train_privatization", "eval_privatization", "seed", "accuracy", "standard_error"), csv_rows),
    )


def summarize(rows):
    """Mean accuracy over seeds per (eta, train mode, eval mode) with the standard error of that mean."""
    groups = {}
    for r in rows:
        groups.setdefault((r["eta"], r["train_privatization"], r["eval_privatization"]), []).append(r)
    out = []
    for (eta, tr, ev), rs in groups.items():
        acc = np.array([r["accuracy"] for r in rs])
        se = np.array([r["standard_error"] for r in rs])
        out.append({
            "eta": eta,
            "train_privatization": tr,
            "eval_privatization": ev,
            "seeds": len(rs),
            "mean_accuracy": float(acc.mean()),
            "standard_error": float(np.sqrt(np.sum(se**2)) / len(rs)),
        })
    return out


COMMANDS = {
    "privatize": cmd_privatize,
    "gen-pretrain": cmd_gen_pretrain,
    "probe": cmd_probe,
    ("report", "geometry"): cmd_geometry,
    ("report", "deniability"): cmd_deniability,
    ("report", "inversion"): cmd_inversion,
    ("report", "examples"): cmd_examples,
}


def run_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    if cfg.get("eta") is None and args.command in ("report", "probe"):
        cfg["eta"] = list(DEFAULT_ETAS)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    key = ("report", args.report) if args.command == "report" else args.command
    config = run_config(args)
    try:
        if not os.path.exists(args.table):
            raise CliError(f"table file not found: {args.table}")
        for attr in ("input", "train", "eval"):
            path = getattr(args, attr, None)
            if path is not None and not os.path.exists(path):
                raise CliError(f"{attr} file not found: {path}")
        table = load_table(args.table, args.format)
        COMMANDS[key](args, config, table)
    except (CliError, OSError, ValueError, IndexError) as exc:
        print(f"dxprivacy: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
