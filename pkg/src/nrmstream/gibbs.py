"""Collapsed Gibbs sampler for the normalized-GGP mixture.

Serves as the desk-scale gold standard.  Documents carry hard cluster
labels; one sweep reassigns every document from the product of its urn
weight (occupied cluster k gets n_k - sigma, a fresh cluster gets
a * (u + tau)^sigma) and the Dirichlet-multinomial predictive with the
document's own counts removed, then resamples the auxiliary variable u
once.

The u update targets the conditional consistent with those urn weights,

    p(u | z) propto u^(n-1) * exp(-laplace_exponent(u))
                          * prod_k exp(log_tilted_moment(n_k, u)),

sampled by slice sampling in v = log u (the density is unimodal there).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .errors import ConvergenceError
from .ggp import NggpParams, laplace_exponent, log_tilted_moment
from .observation import DirichletPosterior, log_prior_predictive

__all__ = [
    "GibbsState",
    "gibbs_init",
    "gibbs_sweep",
    "sample_u",
    "log_u_conditional",
    "log_joint_proxy",
    "heldout_loglik_sample",
    "gibbs_heldout_loglik",
    "run_chain",
]


class _HardCluster:
    __slots__ = ("n", "posterior")

    def __init__(self, n: int, posterior: DirichletPosterior):
        self.n = n
        self.posterior = posterior


class GibbsState:
    """One chain's state: hard labels, per-cluster counts, auxiliary u."""

    __slots__ = ("params", "alpha0", "vocab_size", "assignments", "clusters", "u",
                 "rng", "seed", "next_id")

    def __init__(self, params: NggpParams, alpha0: float, vocab_size: int, seed: int):
        self.params = params
        self.alpha0 = float(alpha0)
        self.vocab_size = int(vocab_size)
        self.assignments: list[int] = []
        self.clusters: dict[int, _HardCluster] = {}
        self.u = 1.0
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)
        self.next_id = 1

    def n_docs(self) -> int:
        return len(self.assignments)

    def snapshot(self) -> "GibbsState":
        """Frozen copy of the posterior-relevant fields (not the rng)."""
        copy = GibbsState(self.params, self.alpha0, self.vocab_size, self.seed)
        copy.assignments = list(self.assignments)
        copy.clusters = {
            cid: _HardCluster(c.n, c.posterior.copy()) for cid, c in self.clusters.items()
        }
        copy.u = self.u
        copy.next_id = self.next_id
        return copy


def gibbs_init(corpus: Corpus, params: NggpParams, alpha0: float, seed: int) -> GibbsState:
    """All documents in a single cluster; beats random initialization here."""
    state = GibbsState(params, alpha0, corpus.vocab_size, seed)
    if corpus.docs:
        posterior = DirichletPosterior(alpha0)
        for doc in corpus.docs:
            posterior.update(doc, 1.0)
        state.clusters[1] = _HardCluster(len(corpus.docs), posterior)
        state.assignments = [1] * len(corpus.docs)
        state.next_id = 2
    return state


def log_u_conditional(u: float, n_docs: int, cluster_sizes, params: NggpParams) -> float:
    """Unnormalized log density of u given a hard partition."""
    if u <= 0:
        raise ValueError(f"u must be positive, got {u}")
    out = (n_docs - 1) * np.log(u) - laplace_exponent(u, params)
    for nk in cluster_sizes:
        out += log_tilted_moment(nk, u, params)
    return float(out)


def _slice_sample(log_density, x0: float, rng, width: float = 2.0, max_steps: int = 200) -> float:
    """One slice-sampling transition (stepping out, then shrinkage)."""
    log_y = log_density(x0) - rng.exponential()
    lo = x0 - width * rng.random()
    hi = lo + width
    steps = int(rng.integers(0, max_steps))
    lo_steps, hi_steps = steps, max_steps - 1 - steps
    while log_density(lo) > log_y:
        lo -= width
        lo_steps -= 1
        if lo_steps < 0:
            raise ConvergenceError("slice interval grew past the step-out cap", last_iterate=lo)
    while log_density(hi) > log_y:
        hi += width
        hi_steps -= 1
        if hi_steps < 0:
            raise ConvergenceError("slice interval grew past the step-out cap", last_iterate=hi)
    for _ in range(1000):
        x1 = lo + rng.random() * (hi - lo)
        if log_density(x1) > log_y:
            return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
    raise ConvergenceError("slice shrinkage failed to find an acceptable point", last_iterate=x0)


def sample_u(state: GibbsState) -> float:
    """Draw u from its conditional via slice sampling in v = log u."""
    n = state.n_docs()
    if n < 1:
        raise ValueError("cannot sample u with no documents")
    sizes = [c.n for c in state.clusters.values()]
    params = state.params

    def log_target(v):
        # density of v = log u carries the Jacobian term +v
        return log_u_conditional(np.exp(v), n, sizes, params) + v

    v = _slice_sample(log_target, np.log(state.u), state.rng)
    return float(np.exp(v))


def gibbs_sweep(state: GibbsState, corpus: Corpus) -> GibbsState:
    """Reassign every document, then resample u once."""
    params = state.params
    sigma, a, tau = params.sigma, params.a, params.tau
    log_new_weight = np.log(a) + sigma * np.log(state.u + tau)
    for i, doc in enumerate(corpus.docs):
        old = state.assignments[i]
        cluster = state.clusters[old]
        cluster.n -= 1
        cluster.posterior.downdate(doc, 1.0)
        if cluster.n == 0:
            del state.clusters[old]

        ids = list(state.clusters.keys())
        scores = np.empty(len(ids) + 1)
        for j, cid in enumerate(ids):
            c = state.clusters[cid]
            scores[j] = np.log(c.n - sigma) + c.posterior.log_predictive(doc, state.vocab_size)
        scores[-1] = log_new_weight + log_prior_predictive(doc, state.alpha0, state.vocab_size)
        scores -= scores.max()
        probs = np.exp(scores)
        probs /= probs.sum()
        choice = int(np.searchsorted(np.cumsum(probs), state.rng.random()))
        choice = min(choice, len(ids))

        if choice == len(ids):
            cid = state.next_id
            state.next_id += 1
            state.clusters[cid] = _HardCluster(0, DirichletPosterior(state.alpha0))
        else:
            cid = ids[choice]
        target = state.clusters[cid]
        target.n += 1
        target.posterior.update(doc, 1.0)
        state.assignments[i] = cid
    state.u = sample_u(state)
    return state


def log_joint_proxy(state: GibbsState, corpus: Corpus) -> float:
    """Unnormalized log joint of (partition, u, data); a mixing diagnostic."""
    out = log_u_conditional(state.u, state.n_docs(), [c.n for c in state.clusters.values()],
                            state.params)
    empty = DirichletPosterior(state.alpha0)
    members: dict[int, list] = {cid: [] for cid in state.clusters}
    for i, cid in enumerate(state.assignments):
        members[cid].append(corpus.docs[i])
    for docs in members.values():
        acc = empty.copy()
        for doc in docs:
            out += acc.log_predictive(doc, state.vocab_size)
            acc.update(doc, 1.0)
    return out


def heldout_loglik_sample(state: GibbsState, test: Corpus) -> float:
    """Held-out log-likelihood under one posterior sample.

    Mixture weights follow the urn given the sample's partition and u:
    n_k - sigma for occupied clusters, a (u + tau)^sigma for a fresh one.
    """
    params = state.params
    weights = np.array(
        [c.n - params.sigma for c in state.clusters.values()]
        + [params.a * (state.u + params.tau) ** params.sigma]
    )
    log_w = np.log(weights / weights.sum())
    posteriors = [c.posterior for c in state.clusters.values()]
    total = 0.0
    for doc in test.docs:
        scores = np.array(
            [p.log_predictive(doc, state.vocab_size) for p in posteriors]
            + [log_prior_predictive(doc, state.alpha0, state.vocab_size)]
        )
        scores += log_w
        peak = scores.max()
        total += peak + np.log(np.exp(scores - peak).sum())
    return float(total)


def gibbs_heldout_loglik(samples, test: Corpus) -> float:
    """Average held-out log-likelihood over retained posterior samples."""
    values = [heldout_loglik_sample(sample, test) for sample in samples]
    if not values:
        raise ValueError("no samples to average")
    return float(np.mean(values))


@dataclass
class SweepRecord:
    sweep: int
    n_clusters: int
    u: float
    log_joint: float


def run_chain(
    state: GibbsState,
    corpus: Corpus,
    sweeps: int,
    burn_in: int,
    test: Corpus | None = None,
    diagnostics: list | None = None,
):
    """Run one chain; returns per-retained-sweep held-out values.

    Held-out log-likelihood is evaluated on the fly for every sweep past
    burn_in so no posterior snapshots need to be stored.
    """
    heldout_values = []
    for sweep in range(1, sweeps + 1):
        gibbs_sweep(state, corpus)
        if diagnostics is not None:
            diagnostics.append(
                SweepRecord(sweep, len(state.clusters), state.u, log_joint_proxy(state, corpus))
            )
        if test is not None and sweep > burn_in:
            heldout_values.append(heldout_loglik_sample(state, test))
    return heldout_values
