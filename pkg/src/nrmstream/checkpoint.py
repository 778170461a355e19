"""Versioned binary checkpoint container.

Layout (all integers little-endian, floats IEEE-754 binary64):

    magic      8s   "NRMSTRM\\0"
    version    u32  currently 1
    flags      u32  bit 0: a contribution section follows the clusters
    vocab_size u64
    n_seen     u64
    a, sigma, tau, alpha0, epsilon, merge_threshold   6 x f64
    exact_expected_k  u8
    has_u_cache       u8
    [u_hat f64, u_n_obs u64, u_expected_k f64]        if has_u_cache
    next_id    u64
    n_clusters u64
    per cluster:
        id u64, s_mass f64, unseen_product f64, count_total f64,
        n_entries u64, then (word_id u32, count f64) per entry,
        sorted by word_id
    contribution section (if flagged):
        n_docs u64
        per doc: n_entries u64, then (cluster_id u64, weight f64),
        sorted by cluster_id
    checksum   u32  CRC-32 of everything before it

Loading an unknown version, a payload that ends early, and a checksum
mismatch raise distinct errors.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

from .adf import ClusterState, ModelState
from .errors import (
    CheckpointChecksumError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    DataError,
)
from .ggp import AuxiliaryMode, NggpParams
from .observation import DirichletPosterior

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"NRMSTRM\x00"
FORMAT_VERSION = 1
_FLAG_CONTRIBUTIONS = 1


def _pack_model(state: ModelState) -> bytes:
    parts = [
        struct.pack(
            "<QQ6d",
            state.vocab_size,
            state.n_seen,
            state.params.a,
            state.params.sigma,
            state.params.tau,
            state.alpha0,
            state.epsilon,
            state.merge_threshold,
        ),
        struct.pack("<BB", int(state.exact_expected_k), int(state.u_cache is not None)),
    ]
    if state.u_cache is not None:
        parts.append(
            struct.pack("<dQd", state.u_cache.u_hat, state.u_cache.n_obs, state.u_cache.expected_k)
        )
    parts.append(struct.pack("<QQ", state.next_id, len(state.clusters)))
    for cluster in state.clusters:
        counts = sorted(cluster.posterior.sparse_counts.items())
        parts.append(
            struct.pack(
                "<QdddQ",
                cluster.id,
                cluster.s_mass,
                cluster.unseen_product,
                cluster.posterior.count_total,
                len(counts),
            )
        )
        for word, count in counts:
            parts.append(struct.pack("<Id", word, count))
    return b"".join(parts)


def save_checkpoint(state: ModelState, dest, contributions=None) -> None:
    """Write state (and, optionally, per-document contributions) to dest."""
    flags = _FLAG_CONTRIBUTIONS if contributions is not None else 0
    payload = [MAGIC, struct.pack("<II", FORMAT_VERSION, flags), _pack_model(state)]
    if contributions is not None:
        parts = [struct.pack("<Q", len(contributions))]
        for record in contributions:
            items = sorted(record.items())
            parts.append(struct.pack("<Q", len(items)))
            for cluster_id, weight in items:
                parts.append(struct.pack("<Qd", cluster_id, weight))
        payload.append(b"".join(parts))
    body = b"".join(payload)
    blob = body + struct.pack("<I", zlib.crc32(body))
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as handle:
            handle.write(blob)
    else:
        dest.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.data)} but field at "
                f"offset {self.pos} needs {size} bytes"
            )
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values


def load_checkpoint(source):
    """Read a checkpoint; returns (ModelState, contributions-or-None)."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            data = handle.read()
    else:
        data = source.read()

    if len(data) < len(MAGIC) + 12:
        raise CheckpointTruncatedError(f"file of {len(data)} bytes is too short")
    if data[: len(MAGIC)] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    body, (declared_crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != declared_crc:
        raise CheckpointChecksumError("checksum mismatch; checkpoint is corrupt")

    reader = _Reader(body)
    reader.take(f"<{len(MAGIC)}s")
    version, flags = reader.take("<II")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} not supported (expected {FORMAT_VERSION})"
        )

    vocab_size, n_seen, a, sigma, tau, alpha0, epsilon, merge_threshold = reader.take("<QQ6d")
    exact_ek, has_u = reader.take("<BB")
    u_cache = None
    if has_u:
        u_hat, u_n_obs, u_expected_k = reader.take("<dQd")
        u_cache = AuxiliaryMode(u_hat=u_hat, n_obs=u_n_obs, expected_k=u_expected_k)
    next_id, n_clusters = reader.take("<QQ")

    state = ModelState(
        NggpParams(a=a, sigma=sigma, tau=tau),
        alpha0=alpha0,
        vocab_size=vocab_size,
        epsilon=epsilon,
        merge_threshold=merge_threshold,
        exact_expected_k=bool(exact_ek),
    )
    state.n_seen = int(n_seen)
    state.next_id = int(next_id)
    state.u_cache = u_cache
    for _ in range(n_clusters):
        cid, s_mass, unseen, count_total, n_entries = reader.take("<QdddQ")
        counts = {}
        for _ in range(n_entries):
            word, count = reader.take("<Id")
            counts[word] = count
        posterior = DirichletPosterior(alpha0, counts, count_total)
        state.clusters.append(
            ClusterState(int(cid), posterior, s_mass=s_mass, unseen_product=unseen)
        )

    contributions = None
    if flags & _FLAG_CONTRIBUTIONS:
        (n_docs,) = reader.take("<Q")
        contributions = []
        for _ in range(n_docs):
            (n_entries,) = reader.take("<Q")
            record = {}
            for _ in range(n_entries):
                cluster_id, weight = reader.take("<Qd")
                record[int(cluster_id)] = weight
            contributions.append(record)

    if reader.pos != len(body):
        raise DataError(f"{len(body) - reader.pos} trailing bytes after checkpoint payload")
    return state, contributions
