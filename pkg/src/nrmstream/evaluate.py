"""Held-out scoring, fit curves, hyperparameter grid search, replicates.

Held-out predictive log-likelihood of a document is the log of the
mixture predictive over the K instantiated clusters plus the novel
slot,

    log sum_k w_k * DCM(doc | cluster k)  +  w_{K+1} * DCM(doc | prior),

with w the cluster predictive weights of the trained model.  Including
the novel slot scores the model's innovation mass; the auxiliary
variable is re-solved once from the final training state and held fixed
across test documents.  Because the multinomial coefficient is omitted
from every DCM, reported values are comparable across priors but not
across tokenizations.
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adf import AssignmentRecorder, ModelState, run_stream
from .corpus import Corpus, split
from .errors import DataError, NumericalError
from .ggp import NggpParams, aux_mode, predictive_weights
from .observation import log_predictive_matrix, log_prior_predictive

__all__ = [
    "EvalReport",
    "CurvePoint",
    "heldout_loglik",
    "eval_curve",
    "grid_search",
    "permutation_replicates",
    "DEFAULT_A_GRID",
    "DEFAULT_TAU_GRID",
    "write_curve_csv",
    "write_grid_csv",
    "write_replicates_csv",
]

logger = logging.getLogger(__name__)

DEFAULT_A_GRID = (1.0, 10.0, 100.0, 1000.0)
DEFAULT_TAU_GRID = (0.1, 1.0, 10.0, 100.0, 1000.0)


@dataclass
class CurvePoint:
    n_seen: int
    heldout_loglik: float
    n_clusters: int
    expected_k: float


@dataclass
class EvalReport:
    heldout_loglik: float
    n_clusters: int
    expected_k: float
    curve: list = field(default_factory=list)
    replicates: list = field(default_factory=list)
    replicate_mean: float | None = None
    replicate_stderr: float | None = None


def heldout_loglik(model: ModelState, test: Corpus) -> float:
    """Sum of per-document mixture predictive log-likelihoods.

    Test documents never touch the model.  An untrained model scores
    every document under the prior slot alone.
    """
    if test.vocab_size != model.vocab_size:
        raise DataError(
            f"test vocabulary {test.vocab_size} != model vocabulary {model.vocab_size}"
        )
    posteriors = [c.posterior for c in model.clusters]
    if not posteriors:
        log_w = np.zeros(1)
    else:
        aux = None
        if model.params.sigma > 0.0:
            aux = aux_mode(model.n_seen, model.expected_k(), model.params)
        with np.errstate(divide="ignore"):
            log_w = np.log(predictive_weights(model.masses(), aux, model.params))
    total = 0.0
    for doc in test.docs:
        scores = np.append(
            log_predictive_matrix(doc, posteriors, model.vocab_size),
            log_prior_predictive(doc, model.alpha0, model.vocab_size),
        )
        scores += log_w
        peak = scores.max()
        total += peak + np.log(np.exp(scores - peak).sum())
    return float(total)


def eval_curve(
    state: ModelState,
    train_docs,
    test: Corpus,
    probe_every: int,
    merge_every: int | None = None,
    recorder: AssignmentRecorder | None = None,
    log_probes: bool = False,
) -> EvalReport:
    """Stream the training documents, probing held-out quality on the way.

    Probes fire after every probe_every documents and once at the end of
    the stream; a cadence longer than the corpus therefore yields the
    single terminal point.  Probing only reads the model.
    """
    if probe_every < 1:
        raise ValueError(f"probe_every must be positive, got {probe_every}")
    points: list[CurvePoint] = []

    def probe(model):
        point = CurvePoint(
            n_seen=model.n_seen,
            heldout_loglik=heldout_loglik(model, test),
            n_clusters=len(model.clusters),
            expected_k=model.expected_k(),
        )
        points.append(point)
        if log_probes:
            logger.info(
                "n_seen=%d heldout=%.4f clusters=%d",
                point.n_seen, point.heldout_loglik, point.n_clusters,
            )

    run_stream(
        state, train_docs, merge_every=merge_every,
        recorder=recorder, probe_every=probe_every, probe=probe,
    )
    if not points or points[-1].n_seen != state.n_seen:
        probe(state)
    last = points[-1]
    return EvalReport(
        heldout_loglik=last.heldout_loglik,
        n_clusters=last.n_clusters,
        expected_k=last.expected_k,
        curve=points,
    )


def _fit_and_score(job):
    """Grid-search cell: fit a fresh model on the train split, score the test split."""
    (train, test, a, tau, sigma, alpha0, epsilon, merge_every, exact_ek) = job
    state = ModelState(
        NggpParams(a=a, sigma=sigma, tau=tau),
        alpha0=alpha0,
        vocab_size=train.vocab_size,
        epsilon=epsilon,
        exact_expected_k=exact_ek,
    )
    run_stream(state, train.docs, merge_every=merge_every)
    return heldout_loglik(state, test)


def grid_search(
    train: Corpus,
    test: Corpus,
    a_grid=DEFAULT_A_GRID,
    tau_grid=DEFAULT_TAU_GRID,
    sigma: float = 0.5,
    *,
    alpha0: float,
    epsilon: float | None = None,
    merge_every: int | None = None,
    exact_expected_k: bool = True,
    jobs: int = 1,
):
    """Pick (a, tau) by held-out log-likelihood over a parameter grid.

    With sigma = 0 the predictive and evaluation paths never consume
    tau, so the tau grid collapses to a single column (fixed at 1).
    A failing cell is logged and scored -inf rather than aborting the
    search.  Returns (best_a, best_tau, rows) with one (a, tau, loglik)
    row per cell.
    """
    taus = tuple(tau_grid) if sigma > 0.0 else (1.0,)
    cells = [(float(a), float(tau)) for a in a_grid for tau in taus]
    job_list = [
        (train, test, a, tau, sigma, alpha0, epsilon, merge_every, exact_expected_k)
        for a, tau in cells
    ]
    scores = []
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fit_and_score, job) for job in job_list]
            for (a, tau), future in zip(cells, futures):
                try:
                    scores.append(future.result())
                except Exception as exc:
                    logger.warning("grid cell a=%g tau=%g failed: %s", a, tau, exc)
                    scores.append(-np.inf)
    else:
        for (a, tau), job in zip(cells, job_list):
            try:
                scores.append(_fit_and_score(job))
            except Exception as exc:
                logger.warning("grid cell a=%g tau=%g failed: %s", a, tau, exc)
                scores.append(-np.inf)
    rows = [(a, tau, score) for (a, tau), score in zip(cells, scores)]
    best_index = int(np.argmax(scores))
    if not np.isfinite(scores[best_index]):
        raise NumericalError("every grid cell failed")
    best_a, best_tau = cells[best_index]
    return best_a, best_tau, rows


def permutation_replicates(
    corpus: Corpus,
    r: int,
    seed: int,
    *,
    params: NggpParams,
    alpha0: float,
    test_frac: float = 0.2,
    epsilon: float | None = None,
    merge_every: int | None = None,
    exact_expected_k: bool = True,
) -> EvalReport:
    """Fit r permutations of the training order; report mean and stderr.

    The train/test split is fixed by seed; replicate i permutes the
    training documents with seed + 1 + i.  The standard error is the
    sample standard deviation over sqrt(r), undefined (None) for r = 1.
    """
    if r < 1:
        raise ValueError(f"need at least one replicate, got {r}")
    train, test = split(corpus, test_frac, seed)
    values = []
    last_state = None
    for rep in range(r):
        order = np.random.default_rng(seed + 1 + rep).permutation(len(train.docs))
        state = ModelState(
            params, alpha0=alpha0, vocab_size=train.vocab_size,
            epsilon=epsilon, exact_expected_k=exact_expected_k,
        )
        run_stream(state, [train.docs[i] for i in order], merge_every=merge_every)
        values.append(heldout_loglik(state, test))
        last_state = state
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(r)) if r > 1 else None
    return EvalReport(
        heldout_loglik=mean,
        n_clusters=len(last_state.clusters),
        expected_k=last_state.expected_k(),
        replicates=values,
        replicate_mean=mean,
        replicate_stderr=stderr,
    )


def _open_for_write(dest):
    if isinstance(dest, (str, Path)):
        return open(dest, "w", encoding="utf-8", newline=""), True
    return dest, False


def write_curve_csv(report: EvalReport, dest, seed: int | None = None) -> None:
    handle, owned = _open_for_write(dest)
    try:
        if seed is not None:
            handle.write(f"# seed={seed}\n")
        handle.write("n_seen,heldout_loglik,n_clusters,expected_k\n")
        for p in report.curve:
            handle.write(f"{p.n_seen},{p.heldout_loglik!r},{p.n_clusters},{p.expected_k!r}\n")
    finally:
        if owned:
            handle.close()


def write_grid_csv(rows, dest, seed: int | None = None) -> None:
    handle, owned = _open_for_write(dest)
    try:
        if seed is not None:
            handle.write(f"# seed={seed}\n")
        handle.write("a,tau,heldout_loglik\n")
        for a, tau, loglik in rows:
            handle.write(f"{a!r},{tau!r},{loglik!r}\n")
    finally:
        if owned:
            handle.close()


def write_replicates_csv(report: EvalReport, dest, seed: int | None = None) -> None:
    handle, owned = _open_for_write(dest)
    try:
        if seed is not None:
            handle.write(f"# seed={seed}\n")
        handle.write("replicate,heldout_loglik\n")
        for i, value in enumerate(report.replicates):
            handle.write(f"{i},{value!r}\n")
        handle.write(f"mean,{report.replicate_mean!r}\n")
        if report.replicate_stderr is not None:
            handle.write(f"stderr,{report.replicate_stderr!r}\n")
    finally:
        if owned:
            handle.close()
