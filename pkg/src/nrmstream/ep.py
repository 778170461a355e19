"""Multi-pass batch refinement on top of a completed streaming fit.

Each training document stores the soft assignment it contributed; a
refinement removes that contribution from the cluster masses and
posteriors (the theta-side factor is reconstructed as weight times the
document's counts rather than stored), re-scores the document against
the resulting cavity, replaces the contribution, and prunes clusters
whose mass fell below the spawn threshold.  Pruning renormalizes every
affected document's stored assignment and repairs the global statistics
so the contribution ledger stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adf import ModelState, StepInfo
from .corpus import Corpus
from .errors import LedgerError
from .ggp import AuxiliaryMode, aux_mode, predictive_weights
from .observation import log_predictive_matrix, log_prior_predictive

__all__ = ["LocalContribution", "EpState", "ep_init_from_adf", "ep_refine_doc", "ep_sweep", "ep_run", "audit_ledger"]

_MASS_TOL = 1e-6


@dataclass
class LocalContribution:
    """Stored per-document factor: the soft assignment keyed by cluster id."""

    doc_index: int
    weights: dict


class EpState:
    """Refinement state: the model plus one contribution per training doc."""

    __slots__ = ("model", "contributions", "corpus")

    def __init__(self, model: ModelState, contributions, corpus: Corpus):
        self.model = model
        self.contributions = contributions
        self.corpus = corpus


def ep_init_from_adf(model: ModelState, recorded_assignments, corpus: Corpus) -> EpState:
    """Wrap a finished streaming fit and its recorded assignments.

    recorded_assignments holds one {cluster_id: weight} map per training
    document, as captured by AssignmentRecorder (merge moves already
    folded in).  The reconstruction is audited: cluster masses and
    posterior counts must match the sums of the recorded contributions.
    """
    if len(recorded_assignments) != len(corpus.docs):
        raise LedgerError(
            f"{len(recorded_assignments)} recorded assignments for "
            f"{len(corpus.docs)} documents"
        )
    contributions = [
        record if isinstance(record, LocalContribution) else LocalContribution(i, dict(record))
        for i, record in enumerate(recorded_assignments)
    ]
    state = EpState(model, contributions, corpus)
    audit_ledger(state)
    return state


def audit_ledger(state: EpState, tol: float = _MASS_TOL) -> None:
    """Verify cluster masses and posteriors against stored contributions."""
    live = {c.id for c in state.model.clusters}
    mass = {cid: 0.0 for cid in live}
    counts = {cid: {} for cid in live}
    for contribution in state.contributions:
        doc = state.corpus.docs[contribution.doc_index]
        for cid, weight in contribution.weights.items():
            if cid not in live:
                raise LedgerError(f"contribution references dead cluster {cid}")
            if weight < 0:
                raise LedgerError(f"negative contribution weight {weight}")
            mass[cid] += weight
            acc = counts[cid]
            for w, c in zip(doc.word_ids, doc.counts):
                acc[w] = acc.get(w, 0.0) + weight * c
    for cluster in state.model.clusters:
        if abs(cluster.s_mass - mass[cluster.id]) > tol * max(1.0, cluster.s_mass):
            raise LedgerError(
                f"cluster {cluster.id} mass {cluster.s_mass} != contribution sum "
                f"{mass[cluster.id]}"
            )
        stored = cluster.posterior.sparse_counts
        expected = counts[cluster.id]
        for w in stored.keys() | expected.keys():
            if abs(stored.get(w, 0.0) - expected.get(w, 0.0)) > tol:
                raise LedgerError(
                    f"cluster {cluster.id} count for word {w}: stored "
                    f"{stored.get(w, 0.0)}, contributions give {expected.get(w, 0.0)}"
                )


def _prune_small_clusters(state: EpState) -> list:
    """Drop clusters below the spawn threshold and repair the ledger.

    Each affected document's remaining weights are scaled back up to sum
    one; the extra mass is pushed into the surviving clusters' masses and
    posteriors so the ledger invariant keeps holding exactly.
    """
    model = state.model
    doomed = {c.id for c in model.clusters if c.s_mass < model.epsilon}
    if not doomed:
        return []
    model.clusters = [c for c in model.clusters if c.id not in doomed]
    by_id = {c.id: c for c in model.clusters}
    for contribution in state.contributions:
        removed = 0.0
        for cid in doomed & contribution.weights.keys():
            removed += contribution.weights.pop(cid)
        if removed == 0.0:
            continue
        if removed >= 1.0 - 1e-12:
            raise LedgerError(
                f"document {contribution.doc_index} lost all assignment mass "
                "to pruned clusters"
            )
        scale = 1.0 / (1.0 - removed)
        doc = state.corpus.docs[contribution.doc_index]
        for cid, weight in contribution.weights.items():
            delta = weight * (scale - 1.0)
            contribution.weights[cid] = weight * scale
            cluster = by_id[cid]
            cluster.s_mass += delta
            cluster.posterior._accumulate(doc, delta)
    return sorted(doomed)


def ep_refine_doc(state: EpState, i: int) -> StepInfo:
    """Re-resolve document i against the leave-one-out state.

    Removes the stored contribution from masses and posteriors, computes
    the refined soft assignment (auxiliary mode taken at N-1 observations
    with the live cluster count), possibly spawns a cluster exactly as in
    the streaming pass, writes everything back, and prunes.
    """
    model = state.model
    doc = state.corpus.docs[i]
    contribution = state.contributions[i]

    aux = None
    if model.params.sigma > 0.0:
        if len(state.corpus.docs) > 1:
            aux = aux_mode(len(state.corpus.docs) - 1, float(len(model.clusters)), model.params)
        else:
            # leave-one-out of a single document conditions on nothing; the
            # novel slot is then the only live one and its weight cancels
            aux = AuxiliaryMode(u_hat=1.0, n_obs=0, expected_k=0.0)

    for cluster in model.clusters:
        w_old = contribution.weights.get(cluster.id, 0.0)
        if w_old == 0.0:
            continue
        cluster.s_mass -= w_old
        if cluster.s_mass < 0.0:
            if cluster.s_mass < -_MASS_TOL:
                raise LedgerError(
                    f"cluster {cluster.id} mass {cluster.s_mass} negative after removal"
                )
            cluster.s_mass = 0.0
        cluster.posterior.downdate(doc, w_old)

    weights = predictive_weights(model.masses(), aux, model.params)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    log_lik = np.append(
        log_predictive_matrix(doc, [c.posterior for c in model.clusters], model.vocab_size),
        log_prior_predictive(doc, model.alpha0, model.vocab_size),
    )
    score = log_w + log_lik
    score -= score.max()
    assignment = np.exp(score)
    assignment /= assignment.sum()

    new_prob = float(assignment[-1])
    created = new_prob > model.epsilon
    if created:
        # refinement does not maintain the unseen-product recursion; a
        # cluster spawned here is certainly instantiated
        model.new_cluster().unseen_product = 0.0
    else:
        assignment = assignment[:-1] / (1.0 - new_prob)

    for cluster, weight in zip(model.clusters, assignment):
        w = float(weight)
        cluster.posterior.update(doc, w)
        cluster.s_mass += w
    contribution.weights = {
        c.id: float(w) for c, w in zip(model.clusters, assignment) if w > 0.0
    }
    _prune_small_clusters(state)
    return StepInfo(assignment, created=created, new_cluster_prob=new_prob,
                    u_hat=None if aux is None else aux.u_hat)


def ep_sweep(state: EpState, order=None) -> float:
    """One refinement pass over the corpus (in the given document order).

    Returns the convergence delta: the largest L1 change in any
    cluster's posterior mean word distribution, with a cluster appearing
    or disappearing counted as the L1 diameter 2 of the simplex.
    """
    model = state.model
    before = {
        c.id: c.posterior.expected_theta(model.vocab_size) for c in model.clusters
    }
    if order is None:
        order = range(len(state.corpus.docs))
    for i in order:
        ep_refine_doc(state, int(i))
    delta = 0.0
    after_ids = set()
    for cluster in model.clusters:
        after_ids.add(cluster.id)
        if cluster.id in before:
            theta = cluster.posterior.expected_theta(model.vocab_size)
            delta = max(delta, float(np.abs(theta - before[cluster.id]).sum()))
        else:
            delta = max(delta, 2.0)
    if set(before) - after_ids:
        delta = max(delta, 2.0)
    return delta


def ep_run(state: EpState, epochs: int = 50, delta_tol: float = 1e-4, order=None) -> list:
    """Sweep repeatedly until the delta drops below tolerance or epochs run out."""
    deltas = []
    for _ in range(epochs):
        delta = ep_sweep(state, order=order)
        deltas.append(delta)
        if delta < delta_tol:
            break
    return deltas
