"""Command-line pipeline: generate, fit, refine, sample, search, evaluate.

Every command is deterministic given its config and seeds; the seed is
echoed in every report header.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import sys
from pathlib import Path

import numpy as np

from .adf import AssignmentRecorder, ModelState
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .corpus import (
    gen_bars,
    gen_pitman_yor_mixture,
    parse_uci_bow,
    save_labels,
    split,
    write_uci_bow,
)
from .ep import ep_init_from_adf, ep_run
from .errors import ConfigError, DataError, NrmStreamError, NumericalError
from .evaluate import (
    eval_curve,
    grid_search,
    heldout_loglik,
    write_curve_csv,
    write_grid_csv,
)
from .gibbs import gibbs_init, run_chain

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _load_run_config(args) -> RunConfig:
    config = load_config(getattr(args, "config", None), getattr(args, "set", None) or ())
    if getattr(args, "seed", None) is not None:
        config.eval_seed = args.seed
        config.gibbs_seed = args.seed
    return config


def _resolve_corpora(args, config: RunConfig):
    """Training corpus plus held-out set: explicit file or seeded split."""
    corpus_path = getattr(args, "corpus", None) or config.io.get("corpus")
    if not corpus_path:
        raise ConfigError("no corpus given (flag --corpus or config io.corpus)")
    corpus = parse_uci_bow(corpus_path)
    test_path = getattr(args, "test", None) or config.io.get("test_corpus")
    if test_path:
        return corpus, parse_uci_bow(test_path)
    train, test = split(corpus, config.test_frac, config.eval_seed)
    return train, test


def _new_state(config: RunConfig, vocab_size: int) -> ModelState:
    try:
        return ModelState(
            config.params(),
            alpha0=config.alpha0,
            vocab_size=vocab_size,
            epsilon=config.epsilon,
            merge_threshold=config.merge_threshold,
            exact_expected_k=config.exact_expected_k,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _print_report(command: str, seed: int, fields: dict) -> None:
    print(f"# nrm-stream {command} seed={seed}")
    for key, value in fields.items():
        print(f"{key}: {value}")


def cmd_gen(args) -> int:
    if args.kind == "bars":
        corpus = gen_bars(
            n_docs=args.n_docs if args.n_docs is not None else 200,
            words_per_doc=args.words_per_doc,
            baseline=args.baseline,
            seed=args.seed or 0,
        )
    else:
        corpus = gen_pitman_yor_mixture(
            n_docs=args.n_docs if args.n_docs is not None else 10000,
            discount=args.discount,
            concentration=args.concentration,
            vocab_size=args.vocab_size,
            alpha_cluster=args.alpha_cluster,
            words_per_doc=args.words_per_doc,
            seed=args.seed or 0,
        )
    write_uci_bow(corpus, args.out)
    save_labels(corpus.labels, str(args.out) + ".labels")
    _print_report("gen", args.seed or 0, {
        "kind": args.kind,
        "documents": len(corpus.docs),
        "vocab_size": corpus.vocab_size,
        "corpus": args.out,
        "labels": str(args.out) + ".labels",
    })
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _load_run_config(args)
    train, test = _resolve_corpora(args, config)

    recorder = AssignmentRecorder() if config.ep_record else None
    checkpoint_in = args.checkpoint_in or config.io.get("checkpoint_in")
    if checkpoint_in:
        state, contributions = load_checkpoint(checkpoint_in)
        if recorder is not None and contributions is not None:
            recorder.records = [dict(r) for r in contributions]
    else:
        state = _new_state(config, train.vocab_size)

    report = eval_curve(
        state,
        train.docs,
        test,
        probe_every=config.probe_cadence,
        merge_every=config.merge_every,
        recorder=recorder,
        log_probes=True,
    )
    checkpoint_out = args.checkpoint_out or config.io.get("checkpoint_out")
    if checkpoint_out:
        save_checkpoint(state, checkpoint_out,
                        contributions=recorder.records if recorder else None)
    curve_path = args.curve_csv or (str(checkpoint_out) + ".curve.csv" if checkpoint_out else None)
    if curve_path:
        write_curve_csv(report, curve_path, seed=config.eval_seed)
    _print_report("fit", config.eval_seed, {
        "documents": state.n_seen,
        "heldout_loglik": report.heldout_loglik,
        "n_clusters": report.n_clusters,
        "expected_k": report.expected_k,
        "checkpoint": checkpoint_out or "(not written)",
    })
    return EXIT_OK


def cmd_ep(args) -> int:
    config = _load_run_config(args)
    train, test = _resolve_corpora(args, config)
    checkpoint_in = args.checkpoint_in or config.io.get("checkpoint_in")
    if not checkpoint_in:
        raise ConfigError("ep needs --checkpoint-in (or config io.checkpoint_in)")
    state, contributions = load_checkpoint(checkpoint_in)
    if contributions is None:
        raise DataError(
            f"checkpoint {checkpoint_in} carries no contribution store; "
            "re-run fit with ep.record = true"
        )
    ep_state = ep_init_from_adf(state, contributions, train)
    before = heldout_loglik(state, test)
    deltas = ep_run(ep_state, epochs=config.ep_epochs, delta_tol=config.ep_delta_tol)
    after = heldout_loglik(state, test)
    checkpoint_out = args.checkpoint_out or config.io.get("checkpoint_out")
    if checkpoint_out:
        save_checkpoint(state, checkpoint_out,
                        contributions=[c.weights for c in ep_state.contributions])
    _print_report("ep", config.eval_seed, {
        "epochs_run": len(deltas),
        "final_delta": deltas[-1] if deltas else 0.0,
        "heldout_loglik_start": before,
        "heldout_loglik": after,
        "n_clusters": len(state.clusters),
        "checkpoint": checkpoint_out or "(not written)",
    })
    return EXIT_OK


def _gibbs_chain_job(job):
    (chain, corpus, test, a, sigma, tau, alpha0, sweeps, burn_in, seed) = job
    from .ggp import NggpParams  # local import keeps the job picklable

    state = gibbs_init(corpus, NggpParams(a=a, sigma=sigma, tau=tau), alpha0, seed)
    diagnostics = []
    heldout_values = run_chain(state, corpus, sweeps, burn_in, test=test,
                               diagnostics=diagnostics)
    return chain, diagnostics, heldout_values


def cmd_gibbs(args) -> int:
    config = _load_run_config(args)
    train, test = _resolve_corpora(args, config)
    config.params()  # fail fast on bad prior values
    jobs = [
        (
            chain, train, test, config.a, config.sigma, config.tau, config.alpha0,
            config.gibbs_sweeps, config.gibbs_burn_in, config.gibbs_seed + chain,
        )
        for chain in range(config.gibbs_chains)
    ]
    if args.jobs and args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_gibbs_chain_job, jobs))
    else:
        results = [_gibbs_chain_job(job) for job in jobs]

    all_heldout = [v for _, _, values in results for v in values]
    mean_heldout = float(np.mean(all_heldout))
    diag_path = args.diagnostics_csv
    if diag_path:
        with open(diag_path, "w", encoding="utf-8", newline="") as handle:
            handle.write(f"# seed={config.gibbs_seed}\n")
            handle.write("chain,sweep,n_clusters,u,log_joint\n")
            for chain, diagnostics, _ in results:
                for record in diagnostics:
                    handle.write(
                        f"{chain},{record.sweep},{record.n_clusters},"
                        f"{record.u!r},{record.log_joint!r}\n"
                    )
    _print_report("gibbs", config.gibbs_seed, {
        "chains": config.gibbs_chains,
        "sweeps": config.gibbs_sweeps,
        "retained_samples": len(all_heldout),
        "heldout_loglik": mean_heldout,
        "diagnostics": diag_path or "(not written)",
    })
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    config = _load_run_config(args)
    train, test = _resolve_corpora(args, config)
    best_a, best_tau, rows = grid_search(
        train,
        test,
        sigma=config.sigma,
        alpha0=config.alpha0,
        epsilon=config.epsilon,
        merge_every=config.merge_every,
        exact_expected_k=config.exact_expected_k,
        jobs=args.jobs or 1,
    )
    if args.table_csv:
        write_grid_csv(rows, args.table_csv, seed=config.eval_seed)
    if args.best_out:
        with open(args.best_out, "w", encoding="utf-8") as handle:
            handle.write(f"# nrm-stream gridsearch seed={config.eval_seed}\n")
            handle.write(f"[prior]\na = {best_a!r}\nsigma = {config.sigma!r}\ntau = {best_tau!r}\n")
    _print_report("gridsearch", config.eval_seed, {
        "cells": len(rows),
        "best_a": best_a,
        "best_tau": best_tau,
        "table": args.table_csv or "(not written)",
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_run_config(args)
    state, _ = load_checkpoint(args.checkpoint)
    test = parse_uci_bow(args.test)
    value = heldout_loglik(state, test)
    _print_report("eval", config.eval_seed, {
        "test_documents": len(test.docs),
        "heldout_loglik": value,
        "n_clusters": len(state.clusters),
        "expected_k": state.expected_k(),
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nrm-stream",
        description="Streaming variational inference for normalized random measure mixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", type=Path, default=None, help="INI config file")
            p.add_argument("--set", action="append", metavar="SEC.KEY=VALUE",
                           help="override a config value")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    gen = sub.add_parser("gen", help="generate a synthetic corpus")
    gen.add_argument("--kind", choices=("bars", "pitman-yor"), required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--n-docs", type=int, default=None)
    gen.add_argument("--words-per-doc", type=int, default=50)
    gen.add_argument("--baseline", type=float, default=0.1)
    gen.add_argument("--discount", type=float, default=0.75)
    gen.add_argument("--concentration", type=float, default=1.0)
    gen.add_argument("--vocab-size", type=int, default=50)
    gen.add_argument("--alpha-cluster", type=float, default=0.75)
    common(gen, config=False)

    fit = sub.add_parser("fit", help="single streaming pass over a corpus")
    fit.add_argument("--corpus", default=None)
    fit.add_argument("--test", default=None)
    fit.add_argument("--checkpoint-in", default=None, help="resume from this checkpoint")
    fit.add_argument("--checkpoint-out", default=None)
    fit.add_argument("--curve-csv", default=None)
    common(fit)

    ep = sub.add_parser("ep", help="batch refinement of a finished fit")
    ep.add_argument("--corpus", default=None)
    ep.add_argument("--test", default=None)
    ep.add_argument("--checkpoint-in", default=None)
    ep.add_argument("--checkpoint-out", default=None)
    common(ep)

    gibbs = sub.add_parser("gibbs", help="collapsed Gibbs baseline")
    gibbs.add_argument("--corpus", default=None)
    gibbs.add_argument("--test", default=None)
    gibbs.add_argument("--diagnostics-csv", default=None)
    gibbs.add_argument("--jobs", type=int, default=1)
    common(gibbs)

    grid = sub.add_parser("gridsearch", help="hyperparameter grid search")
    grid.add_argument("--corpus", default=None)
    grid.add_argument("--test", default=None)
    grid.add_argument("--best-out", default=None)
    grid.add_argument("--table-csv", default=None)
    grid.add_argument("--jobs", type=int, default=1)
    common(grid)

    ev = sub.add_parser("eval", help="score a checkpoint on a held-out corpus")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--test", required=True)
    common(ev)

    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "ep": cmd_ep,
    "gibbs": cmd_gibbs,
    "gridsearch": cmd_gridsearch,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except NrmStreamError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error("i/o error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
