"""Corpus ingestion, filtering, splitting, and synthetic generators.

Reads and writes the UCI bag-of-words layout (three header lines D, W,
NNZ followed by 1-indexed "docID wordID count" triples) and provides the
two synthetic corpora used throughout: overlapping image bars and a
Pitman-Yor mixture of multinomials with power-law cluster sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .observation import SparseDoc

__all__ = [
    "Corpus",
    "parse_uci_bow",
    "write_uci_bow",
    "load_labels",
    "save_labels",
    "filter_vocab",
    "gen_bars",
    "bar_components",
    "gen_pitman_yor_mixture",
    "split",
]

logger = logging.getLogger(__name__)

BAR_GRID = 8  # bars live on an 8x8 pixel grid, 16 components over 64 words


@dataclass
class Corpus:
    """A list of sparse documents over a shared vocabulary.

    labels, when present (synthetic corpora), give the generating cluster
    of each document.
    """

    docs: list = field(default_factory=list)
    vocab_size: int = 0
    labels: list | None = None

    def __post_init__(self):
        for doc in self.docs:
            if doc.word_ids and doc.word_ids[-1] >= self.vocab_size:
                raise DataError(
                    f"document word id {doc.word_ids[-1]} outside vocabulary "
                    f"of size {self.vocab_size}"
                )
        if self.labels is not None and len(self.labels) != len(self.docs):
            raise DataError(
                f"{len(self.labels)} labels for {len(self.docs)} documents"
            )

    def __len__(self):
        return len(self.docs)


def parse_uci_bow(source) -> Corpus:
    """Parse a UCI bag-of-words file (path or open text file).

    Header is three lines: number of documents D, vocabulary size W, and
    triple count NNZ.  Triples are 1-indexed and converted to 0-indexed.
    Documents with no words are dropped (with a logged count); an NNZ
    that disagrees with the number of triples is logged as a warning;
    malformed lines and out-of-range ids raise DataError with the
    offending line number.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            return parse_uci_bow(handle)

    def next_header(lineno):
        line = source.readline()
        if not line:
            raise DataError(f"line {lineno}: missing header line")
        try:
            value = int(line.strip())
        except ValueError:
            raise DataError(f"line {lineno}: bad header value {line.strip()!r}") from None
        if value < 0:
            raise DataError(f"line {lineno}: negative header value {value}")
        return value

    n_docs = next_header(1)
    vocab_size = next_header(2)
    declared_nnz = next_header(3)

    counts_by_doc = [dict() for _ in range(n_docs)]
    n_triples = 0
    for offset, line in enumerate(source):
        lineno = 4 + offset
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise DataError(f"line {lineno}: expected 'docID wordID count', got {stripped!r}")
        try:
            doc_id, word_id, count = (int(p) for p in parts)
        except ValueError:
            raise DataError(f"line {lineno}: non-integer triple {stripped!r}") from None
        if not 1 <= doc_id <= n_docs:
            raise DataError(f"line {lineno}: docID {doc_id} outside 1..{n_docs}")
        if not 1 <= word_id <= vocab_size:
            raise DataError(f"line {lineno}: wordID {word_id} outside 1..{vocab_size}")
        if count <= 0:
            raise DataError(f"line {lineno}: non-positive count {count}")
        doc_counts = counts_by_doc[doc_id - 1]
        key = word_id - 1
        doc_counts[key] = doc_counts.get(key, 0) + count
        n_triples += 1

    if n_triples != declared_nnz:
        logger.warning("header declared %d triples but file has %d", declared_nnz, n_triples)

    docs = [SparseDoc(c.items()) for c in counts_by_doc if c]
    dropped = n_docs - len(docs)
    if dropped:
        logger.warning("dropped %d empty documents", dropped)
    return Corpus(docs=docs, vocab_size=vocab_size)


def write_uci_bow(corpus: Corpus, dest) -> None:
    """Write the UCI bag-of-words layout; triples sorted by (doc, word)."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8") as handle:
            write_uci_bow(corpus, handle)
        return
    nnz = sum(len(doc) for doc in corpus.docs)
    dest.write(f"{len(corpus.docs)}\n{corpus.vocab_size}\n{nnz}\n")
    for d, doc in enumerate(corpus.docs, start=1):
        for w, c in zip(doc.word_ids, doc.counts):
            dest.write(f"{d} {w + 1} {c}\n")


def save_labels(labels, dest) -> None:
    with open(dest, "w", encoding="utf-8") as handle:
        for label in labels:
            handle.write(f"{int(label)}\n")


def load_labels(source) -> list:
    with open(source, "r", encoding="utf-8") as handle:
        return [int(line.strip()) for line in handle if line.strip()]


def filter_vocab(
    corpus: Corpus,
    min_doc_freq: int = 20,
    max_doc_frac: float = 0.9,
    min_doc_len: int = 20,
) -> Corpus:
    """Drop rare/ubiquitous words, reindex, then drop short documents.

    Words kept have document frequency in [min_doc_freq,
    max_doc_frac * D]; surviving word ids are compacted preserving order.
    Documents whose post-filter token total falls below min_doc_len are
    dropped (labels follow).
    """
    doc_freq = {}
    for doc in corpus.docs:
        for w in doc.word_ids:
            doc_freq[w] = doc_freq.get(w, 0) + 1
    ceiling = max_doc_frac * len(corpus.docs)
    kept = sorted(w for w, f in doc_freq.items() if min_doc_freq <= f <= ceiling)
    remap = {w: i for i, w in enumerate(kept)}

    docs = []
    labels = [] if corpus.labels is not None else None
    for i, doc in enumerate(corpus.docs):
        entries = [(remap[w], c) for w, c in zip(doc.word_ids, doc.counts) if w in remap]
        total = sum(c for _, c in entries)
        if total >= min_doc_len and entries:
            docs.append(SparseDoc(entries))
            if labels is not None:
                labels.append(corpus.labels[i])
    return Corpus(docs=docs, vocab_size=len(kept), labels=labels)


def bar_components(baseline: float = 0.1) -> np.ndarray:
    """The 16 bar word distributions: 8 row bars then 8 column bars.

    Each component mixes a uniform distribution over its bar's 8 pixels
    with weight (1 - baseline) and a global uniform over all 64 pixels
    with weight baseline, so baseline is the fraction of total mass
    shared across clusters.
    """
    if not 0.0 <= baseline < 1.0:
        raise ValueError(f"baseline must lie in [0, 1), got {baseline}")
    v = BAR_GRID * BAR_GRID
    comps = np.zeros((2 * BAR_GRID, v))
    for i in range(BAR_GRID):
        row = np.zeros((BAR_GRID, BAR_GRID))
        row[i, :] = 1.0
        comps[i] = row.ravel()
        col = np.zeros((BAR_GRID, BAR_GRID))
        col[:, i] = 1.0
        comps[BAR_GRID + i] = col.ravel()
    comps /= BAR_GRID
    return (1.0 - baseline) * comps + baseline / v


def gen_bars(
    n_docs: int = 200,
    words_per_doc: int = 50,
    baseline: float = 0.1,
    seed: int = 0,
) -> Corpus:
    """Synthetic bars corpus: images as documents over 64 pixel-words.

    Each document picks one of the 16 bar components uniformly and draws
    words_per_doc tokens from it.  Labels record the chosen component.
    """
    rng = np.random.default_rng(seed)
    comps = bar_components(baseline)
    labels = rng.integers(0, len(comps), size=n_docs)
    docs = [
        SparseDoc.from_dense(rng.multinomial(words_per_doc, comps[z])) for z in labels
    ]
    return Corpus(docs=docs, vocab_size=comps.shape[1], labels=[int(z) for z in labels])


def gen_pitman_yor_mixture(
    n_docs: int,
    discount: float = 0.75,
    concentration: float = 1.0,
    vocab_size: int = 50,
    alpha_cluster: float = 0.75,
    words_per_doc: int = 50,
    seed: int = 0,
) -> Corpus:
    """Pitman-Yor mixture of multinomials via the two-parameter urn.

    Cluster labels follow the urn (weight n_k - discount for an occupied
    cluster, concentration + discount * K for a new one), which matches
    the Pitman-Yor partition law exactly and yields power-law cluster
    sizes for discount > 0.  Each new cluster draws its word distribution
    from a symmetric Dirichlet(alpha_cluster).
    """
    if not 0.0 <= discount < 1.0:
        raise ValueError(f"discount must lie in [0, 1), got {discount}")
    if concentration <= -discount:
        raise ValueError(
            f"concentration must exceed -discount, got {concentration} <= {-discount}"
        )
    rng = np.random.default_rng(seed)
    sizes: list[int] = []
    thetas: list[np.ndarray] = []
    docs = []
    labels = []
    for n in range(n_docs):
        weights = np.array([nk - discount for nk in sizes] + [concentration + discount * len(sizes)])
        probs = weights / weights.sum()
        z = int(rng.choice(len(probs), p=probs))
        if z == len(sizes):
            sizes.append(0)
            thetas.append(rng.dirichlet(np.full(vocab_size, alpha_cluster)))
        sizes[z] += 1
        labels.append(z)
        docs.append(SparseDoc.from_dense(rng.multinomial(words_per_doc, thetas[z])))
    return Corpus(docs=docs, vocab_size=vocab_size, labels=labels)


def split(corpus: Corpus, test_frac: float, seed: int = 0):
    """Disjoint, exhaustive train/test split with a seeded shuffle."""
    if not 0.0 < test_frac < 1.0:
        raise ValueError(f"test_frac must lie in (0, 1), got {test_frac}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.docs))
    n_test = int(round(test_frac * len(corpus.docs)))
    test_idx = sorted(order[:n_test].tolist())
    train_idx = sorted(order[n_test:].tolist())

    def take(indices):
        docs = [corpus.docs[i] for i in indices]
        labels = [corpus.labels[i] for i in indices] if corpus.labels is not None else None
        return Corpus(docs=docs, vocab_size=corpus.vocab_size, labels=labels)

    return take(train_idx), take(test_idx)
