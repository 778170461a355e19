"""Single-pass streaming inference engine.

Per observation: recompute the auxiliary-variable mode, score the
document against every cluster and a fresh one, soft-assign, spawn a new
cluster when the novel-slot probability clears the threshold (otherwise
renormalize over the existing clusters), then fold the assignment into
every cluster's Dirichlet posterior, its accumulated mass, and the
expected-cluster-count recursion.  Assignments are normalized, so the
cluster masses always sum to the number of documents seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .ggp import AuxiliaryMode, NggpParams, aux_mode, expected_clusters_update, predictive_weights
from .observation import DirichletPosterior, SparseDoc, log_predictive_matrix, log_prior_predictive

__all__ = [
    "ClusterState",
    "ModelState",
    "StepInfo",
    "adf_step",
    "merge_clusters",
    "run_stream",
    "AssignmentRecorder",
]


class ClusterState:
    """Per-cluster sufficient statistics.

    s_mass accumulates the soft assignment weights, unseen_product the
    running product of (1 - weight) feeding the expected-cluster-count
    recursion.  ids are stable: merges keep the survivor's id and ids of
    absorbed clusters are never reused.
    """

    __slots__ = ("id", "s_mass", "posterior", "unseen_product")

    def __init__(self, id: int, posterior: DirichletPosterior, s_mass: float = 0.0,
                 unseen_product: float = 1.0):
        self.id = id
        self.s_mass = s_mass
        self.posterior = posterior
        self.unseen_product = unseen_product

    def __repr__(self):
        return f"ClusterState(id={self.id}, s_mass={self.s_mass:.4f})"


class ModelState:
    """Full streaming-inference state; checkpointable.

    epsilon is the novel-cluster threshold and must be at least sigma
    (below that, a spawned cluster would get zero predictive weight on
    the very next step) and below 1 (otherwise no cluster can ever
    spawn).  exact_expected_k switches between the exact
    expected-cluster-count recursion and the cheaper count
    approximation.
    """

    __slots__ = (
        "params",
        "alpha0",
        "vocab_size",
        "epsilon",
        "merge_threshold",
        "clusters",
        "n_seen",
        "next_id",
        "u_cache",
        "exact_expected_k",
    )

    def __init__(
        self,
        params: NggpParams,
        alpha0: float,
        vocab_size: int,
        epsilon: float | None = None,
        merge_threshold: float = 0.98,
        exact_expected_k: bool = True,
    ):
        if epsilon is None:
            epsilon = max(params.sigma, 0.01)
        if epsilon < params.sigma:
            raise ValueError(
                f"epsilon={epsilon} below sigma={params.sigma}; spawned clusters "
                "would be dead on arrival"
            )
        if not epsilon < 1.0:
            raise ValueError(f"epsilon must be below 1, got {epsilon}")
        if not 0.0 <= merge_threshold <= 1.0:
            raise ValueError(f"merge_threshold must lie in [0, 1], got {merge_threshold}")
        if alpha0 <= 0:
            raise ValueError(f"alpha0 must be positive, got {alpha0}")
        if vocab_size <= 0:
            raise ValueError(f"vocab_size must be positive, got {vocab_size}")
        self.params = params
        self.alpha0 = float(alpha0)
        self.vocab_size = int(vocab_size)
        self.epsilon = float(epsilon)
        self.merge_threshold = float(merge_threshold)
        self.clusters: list[ClusterState] = []
        self.n_seen = 0
        self.next_id = 1
        self.u_cache: AuxiliaryMode | None = None
        self.exact_expected_k = bool(exact_expected_k)

    def masses(self) -> np.ndarray:
        return np.array([c.s_mass for c in self.clusters])

    def expected_k(self) -> float:
        if not self.exact_expected_k:
            return float(len(self.clusters))
        return len(self.clusters) - sum(c.unseen_product for c in self.clusters)

    def new_cluster(self) -> ClusterState:
        cluster = ClusterState(self.next_id, DirichletPosterior(self.alpha0))
        self.next_id += 1
        self.clusters.append(cluster)
        return cluster


@dataclass
class StepInfo:
    """Outcome of one streaming step."""

    assignment: np.ndarray
    created: bool
    new_cluster_prob: float
    u_hat: float | None


def adf_step(state: ModelState, doc: SparseDoc) -> StepInfo:
    """Process one document, mutating state in place.

    The very first document deterministically opens cluster 1 with full
    weight.  Afterwards each step follows: auxiliary mode at the current
    (n_seen, E[K]); predictive weights over K+1 slots; soft assignment
    proportional to predictive weight times marginal likelihood; spawn
    if the novel slot exceeds epsilon, else renormalize over K; global
    update of all posteriors, masses, and unseen products with the final
    weights.
    """
    if len(doc) == 0:
        raise DataError("cannot process an empty document")
    if doc.word_ids[-1] >= state.vocab_size:
        raise DataError(
            f"document word id {doc.word_ids[-1]} outside vocabulary of {state.vocab_size}"
        )

    if state.n_seen == 0:
        cluster = state.new_cluster()
        cluster.posterior.update(doc, 1.0)
        cluster.s_mass = 1.0
        cluster.unseen_product = 0.0
        state.n_seen = 1
        return StepInfo(np.array([1.0]), created=True, new_cluster_prob=1.0, u_hat=None)

    aux = None
    if state.params.sigma > 0.0:
        aux = aux_mode(state.n_seen, state.expected_k(), state.params)
        state.u_cache = aux

    weights = predictive_weights(state.masses(), aux, state.params)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    log_lik = np.append(
        log_predictive_matrix(doc, [c.posterior for c in state.clusters], state.vocab_size),
        log_prior_predictive(doc, state.alpha0, state.vocab_size),
    )
    score = log_w + log_lik
    score -= score.max()
    assignment = np.exp(score)
    assignment /= assignment.sum()

    new_prob = float(assignment[-1])
    created = new_prob > state.epsilon
    if created:
        state.new_cluster()
    else:
        assignment = assignment[:-1] / (1.0 - new_prob)

    for cluster, weight in zip(state.clusters, assignment):
        w = float(weight)
        cluster.posterior.update(doc, w)
        cluster.s_mass += w
    products, _ = expected_clusters_update(
        [c.unseen_product for c in state.clusters], assignment
    )
    for cluster, product in zip(state.clusters, products):
        cluster.unseen_product = float(product)
    state.n_seen += 1
    return StepInfo(assignment, created=created, new_cluster_prob=new_prob,
                    u_hat=None if aux is None else aux.u_hat)


def merge_clusters(state: ModelState):
    """Combine near-duplicate clusters; returns (survivor, absorbed) pairs.

    Similarity is the cosine between posterior mean word distributions.
    All pairs at or above the state's merge threshold are processed
    greedily in descending similarity (ties broken by cluster ids for
    determinism); a merge adds masses and pseudocounts, multiplies the
    unseen products, and keeps the id of the larger-mass cluster (lower
    id on equal mass).
    """
    k = len(state.clusters)
    if k < 2:
        return []
    thetas = np.stack([c.posterior.expected_theta(state.vocab_size) for c in state.clusters])
    norms = np.linalg.norm(thetas, axis=1)
    sims = (thetas @ thetas.T) / np.outer(norms, norms)

    candidates = []
    for i in range(k):
        for j in range(i + 1, k):
            if sims[i, j] >= state.merge_threshold:
                candidates.append((-sims[i, j], state.clusters[i].id, state.clusters[j].id, i, j))
    candidates.sort()

    alive = {c.id: c for c in state.clusters}
    merges = []
    for _, _, _, i, j in candidates:
        first, second = state.clusters[i], state.clusters[j]
        if first.id not in alive or second.id not in alive:
            continue
        if (second.s_mass, -second.id) > (first.s_mass, -first.id):
            survivor, absorbed = second, first
        else:
            survivor, absorbed = first, second
        for w, c in absorbed.posterior.sparse_counts.items():
            survivor.posterior.sparse_counts[w] = (
                survivor.posterior.sparse_counts.get(w, 0.0) + c
            )
        survivor.posterior.count_total += absorbed.posterior.count_total
        survivor.s_mass += absorbed.s_mass
        survivor.unseen_product *= absorbed.unseen_product
        del alive[absorbed.id]
        merges.append((survivor.id, absorbed.id))
    if merges:
        state.clusters = [c for c in state.clusters if c.id in alive]
    return merges


class AssignmentRecorder:
    """Keeps one soft-assignment map per document for later batch refinement.

    Maps are keyed by cluster id; on a merge the absorbed id's mass is
    folded into the survivor so the records always describe live
    clusters.
    """

    def __init__(self):
        self.records: list[dict[int, float]] = []

    def on_step(self, state: ModelState, info: StepInfo) -> None:
        self.records.append(
            {c.id: float(w) for c, w in zip(state.clusters, info.assignment) if w > 0.0}
        )

    def on_merges(self, merges) -> None:
        for survivor, absorbed in merges:
            for record in self.records:
                if absorbed in record:
                    record[survivor] = record.get(survivor, 0.0) + record.pop(absorbed)


def run_stream(
    state: ModelState,
    docs,
    merge_every: int | None = None,
    recorder: AssignmentRecorder | None = None,
    probe_every: int | None = None,
    probe=None,
) -> ModelState:
    """Fold adf_step over a document iterator.

    merge_every triggers merge moves each time that many documents have
    been processed, plus once at end of stream.  probe(state) fires every
    probe_every documents (and is the hook used for evaluation curves and
    periodic checkpoints).  Iterator failures are re-raised as DataError
    carrying the index of the failing record.
    """
    iterator = iter(docs)
    index = 0
    while True:
        try:
            doc = next(iterator)
        except StopIteration:
            break
        except Exception as exc:
            raise DataError(f"document stream failed at record {index}: {exc}") from exc
        info = adf_step(state, doc)
        if recorder is not None:
            recorder.on_step(state, info)
        index += 1
        if merge_every is not None and index % merge_every == 0:
            merges = merge_clusters(state)
            if recorder is not None:
                recorder.on_merges(merges)
        if probe_every is not None and probe is not None and index % probe_every == 0:
            probe(state)
    if merge_every is not None and index % merge_every != 0:
        merges = merge_clusters(state)
        if recorder is not None:
            recorder.on_merges(merges)
    return state
