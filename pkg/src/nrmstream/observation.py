"""Multinomial-Dirichlet observation model over sparse count vectors.

Each cluster carries a Dirichlet posterior over word probabilities,
stored as a symmetric base concentration plus sparse accumulated soft
counts.  The marginal likelihood of a document under a cluster is the
Dirichlet-multinomial (Polya) predictive; the multinomial coefficient
N_d! / prod_w x_dw! is omitted everywhere since it is constant across
clusters and shifts held-out log-likelihoods by a model-independent
amount.
"""

from __future__ import annotations

from math import lgamma

import numpy as np
from scipy.special import gammaln

from .errors import LedgerError

__all__ = ["SparseDoc", "DirichletPosterior", "log_prior_predictive", "log_predictive_matrix"]

# counts this far below zero after a downdate are floating drift; anything
# worse signals a corrupted contribution ledger
_DOWNDATE_TOL = 1e-6


class SparseDoc:
    """Sparse count vector over a vocabulary.

    word_ids are strictly increasing; counts are positive integers; total
    is their sum.  Entries may be passed in any order and are sorted.
    """

    __slots__ = ("word_ids", "counts", "total")

    def __init__(self, entries):
        pairs = sorted((int(w), int(c)) for w, c in entries)
        ids = tuple(w for w, _ in pairs)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate word ids in document")
        if ids and ids[0] < 0:
            raise ValueError(f"negative word id {ids[0]}")
        counts = tuple(c for _, c in pairs)
        if any(c <= 0 for c in counts):
            raise ValueError("word counts must be positive")
        self.word_ids = ids
        self.counts = counts
        self.total = sum(counts)

    @classmethod
    def from_dense(cls, vector) -> "SparseDoc":
        vector = np.asarray(vector)
        (nonzero,) = np.nonzero(vector)
        return cls((int(w), int(vector[w])) for w in nonzero)

    @property
    def entries(self):
        return list(zip(self.word_ids, self.counts))

    def __len__(self):
        return len(self.word_ids)

    def __eq__(self, other):
        return (
            isinstance(other, SparseDoc)
            and self.word_ids == other.word_ids
            and self.counts == other.counts
        )

    def __hash__(self):
        return hash((self.word_ids, self.counts))

    def __repr__(self):
        return f"SparseDoc({self.entries!r})"


class DirichletPosterior:
    """Dirichlet posterior over word probabilities for one cluster.

    Holds the symmetric base concentration alpha0 and a sparse map of
    accumulated (soft) counts.  update/downdate mutate in place: the
    streaming engines own their posteriors and revisit them constantly,
    so copying on every touch would dominate the runtime.
    """

    __slots__ = ("alpha0", "sparse_counts", "count_total")

    def __init__(self, alpha0: float, sparse_counts=None, count_total=None):
        if alpha0 <= 0:
            raise ValueError(f"alpha0 must be positive, got {alpha0}")
        self.alpha0 = float(alpha0)
        self.sparse_counts = dict(sparse_counts) if sparse_counts else {}
        if count_total is None:
            count_total = sum(self.sparse_counts.values())
        self.count_total = float(count_total)

    def copy(self) -> "DirichletPosterior":
        return DirichletPosterior(self.alpha0, self.sparse_counts, self.count_total)

    def log_predictive(self, doc: SparseDoc, vocab_size: int) -> float:
        """Log Dirichlet-multinomial predictive of doc under this posterior.

        sum_w [lgamma(alpha + n_w + c_w) - lgamma(alpha + n_w)]
          - [lgamma(V alpha + n + N_d) - lgamma(V alpha + n)]

        which is the Polya-urn product of per-word draw probabilities in
        log form, without the multinomial coefficient.
        """
        if not doc.word_ids:
            raise ValueError("empty document")
        if doc.word_ids[-1] >= vocab_size:
            raise ValueError(
                f"word id {doc.word_ids[-1]} out of range for vocabulary of {vocab_size}"
            )
        a0 = self.alpha0
        counts = self.sparse_counts
        out = 0.0
        for w, c in zip(doc.word_ids, doc.counts):
            base = a0 + counts.get(w, 0.0)
            out += lgamma(base + c) - lgamma(base)
        denom = vocab_size * a0 + self.count_total
        out -= lgamma(denom + doc.total) - lgamma(denom)
        return out

    def update(self, doc: SparseDoc, weight: float) -> "DirichletPosterior":
        """Add weight * doc to the accumulated counts (weight in [0, 1])."""
        if not 0.0 <= weight <= 1.0:
            raise ValueError(f"update weight must lie in [0, 1], got {weight}")
        return self._accumulate(doc, weight)

    def _accumulate(self, doc: SparseDoc, weight: float) -> "DirichletPosterior":
        # internal entry point without the [0, 1] range check; ledger
        # repairs after cluster pruning redistribute weights above 1
        if weight == 0.0:
            return self
        counts = self.sparse_counts
        for w, c in zip(doc.word_ids, doc.counts):
            counts[w] = counts.get(w, 0.0) + weight * c
        self.count_total += weight * doc.total
        return self

    def downdate(self, doc: SparseDoc, weight: float) -> "DirichletPosterior":
        """Exact inverse of update up to floating error.

        Tiny negative results are clamped to zero (and dropped from the
        sparse map); a result below -1e-6 means the contribution ledger
        no longer matches this posterior and raises LedgerError.
        """
        if weight < 0:
            raise ValueError(f"downdate weight must be non-negative, got {weight}")
        if weight == 0.0:
            return self
        counts = self.sparse_counts
        for w, c in zip(doc.word_ids, doc.counts):
            value = counts.get(w, 0.0) - weight * c
            if value < -_DOWNDATE_TOL:
                raise LedgerError(
                    f"count for word {w} went to {value} after downdate; "
                    "stored contribution does not match posterior"
                )
            if value <= 0.0:
                counts.pop(w, None)
            else:
                counts[w] = value
        self.count_total -= weight * doc.total
        if self.count_total < -_DOWNDATE_TOL:
            raise LedgerError(f"count total went to {self.count_total} after downdate")
        if self.count_total < 0.0:
            self.count_total = 0.0
        return self

    def expected_theta(self, vocab_size: int) -> np.ndarray:
        """Posterior mean word distribution as a dense vector."""
        theta = np.full(vocab_size, self.alpha0)
        for w, c in self.sparse_counts.items():
            theta[w] += c
        return theta / (vocab_size * self.alpha0 + self.count_total)


def log_prior_predictive(doc: SparseDoc, alpha0: float, vocab_size: int) -> float:
    """Log predictive of doc under a fresh symmetric Dirichlet prior."""
    if not doc.word_ids:
        raise ValueError("empty document")
    if doc.word_ids[-1] >= vocab_size:
        raise ValueError(
            f"word id {doc.word_ids[-1]} out of range for vocabulary of {vocab_size}"
        )
    if alpha0 <= 0:
        raise ValueError(f"alpha0 must be positive, got {alpha0}")
    out = sum(lgamma(alpha0 + c) - lgamma(alpha0) for c in doc.counts)
    denom = vocab_size * alpha0
    return out - (lgamma(denom + doc.total) - lgamma(denom))


def log_predictive_matrix(doc: SparseDoc, posteriors, vocab_size: int) -> np.ndarray:
    """log_predictive of one doc against many posteriors at once.

    All posteriors must share alpha0.  Gathers the per-word counts into a
    (K, nnz) array and evaluates the log-gamma ratios vectorized; the
    K-way inner loop of the streaming engines runs through here.
    """
    if not posteriors:
        return np.empty(0)
    if doc.word_ids[-1] >= vocab_size:
        raise ValueError(
            f"word id {doc.word_ids[-1]} out of range for vocabulary of {vocab_size}"
        )
    a0 = posteriors[0].alpha0
    ids = doc.word_ids
    base = np.array(
        [[p.sparse_counts.get(w, 0.0) for w in ids] for p in posteriors]
    )
    base += a0
    doc_counts = np.asarray(doc.counts, dtype=float)
    word_terms = (gammaln(base + doc_counts) - gammaln(base)).sum(axis=1)
    denom = np.array([vocab_size * a0 + p.count_total for p in posteriors])
    return word_terms - (gammaln(denom + doc.total) - gammaln(denom))
