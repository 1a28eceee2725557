"""BSSID vocabulary, learnable embeddings and scan encoders."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import RSSI_FLOOR, Scan, canonical_bssid

DEFAULT_DIM = 16
INIT_SCALE = 0.1


def normalize_rssi(rssi):
    """Map dBm onto roughly [0, 1]: -100 -> 0, -40 -> 1."""
    return (np.asarray(rssi, dtype=float) + 100.0) / 60.0


@dataclass
class Vocabulary:
    bssid_to_index: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.bssid_to_index)

    def __len__(self) -> int:
        return len(self.bssid_to_index)

    def __contains__(self, bssid: str) -> bool:
        return canonical_bssid(bssid) in self.bssid_to_index

    def index(self, bssid: str) -> int | None:
        return self.bssid_to_index.get(canonical_bssid(bssid))

    @property
    def bssids(self) -> list[str]:
        return sorted(self.bssid_to_index, key=self.bssid_to_index.__getitem__)

    @classmethod
    def from_list(cls, bssids: Sequence[str]) -> "Vocabulary":
        return cls({b: i for i, b in enumerate(bssids)})


def build_vocabulary(training_scans: Iterable[Scan]) -> Vocabulary:
    seen = {canonical_bssid(b) for s in training_scans for b, _ in s.detections}
    if not seen:
        raise ValueError("cannot build a vocabulary from scans without detections")
    return Vocabulary({b: i for i, b in enumerate(sorted(seen))})


def _bssid_key(bssid: str) -> int:
    return int.from_bytes(hashlib.sha256(canonical_bssid(bssid).encode()).digest()[:8], "little")


class EmbeddingTable:
    """B x d learnable matrix. Row i embeds vocabulary index i.

    Rows start uniform in [-init_scale, init_scale]. BSSIDs outside the
    vocabulary get a row from the same distribution, seeded by the BSSID hash
    and ``fallback_seed`` so inference is reproducible.
    """

    def __init__(self, size: int, dim: int = DEFAULT_DIM, *, init_scale: float = INIT_SCALE,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.init_scale = init_scale
        self.weights = ag.parameter(rng.uniform(-init_scale, init_scale, (size, dim)), "embedding")

    def fallback_row(self, bssid: str, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng([_bssid_key(bssid), seed])
        return rng.uniform(-self.init_scale, self.init_scale, self.dim)


def _rows(detections: Sequence[tuple[str, float]], vocab: Vocabulary, emb: EmbeddingTable,
          seed: int) -> Tensor:
    if not detections:
        raise ValueError("scan has no detections; a set input needs at least one element")
    idx, extra = [], []
    size = vocab.size
    for bssid, _ in detections:
        j = vocab.index(bssid)
        if j is None:
            j = size + len(extra)
            extra.append(emb.fallback_row(bssid, seed))
        idx.append(j)
    table = emb.weights
    if extra:
        table = ag.concat([table, Tensor(np.stack(extra))], axis=0)
    e = ag.take_rows(table, idx)
    r = normalize_rssi([rssi for _, rssi in detections])[:, None]
    return ag.concat([e, Tensor(r)], axis=1)


def encode_set(scan: Scan, vocab: Vocabulary, emb: EmbeddingTable, fallback_rng_seed: int = 0) -> Tensor:
    """n x (d+1) rows [embedding | normalized RSSI] in detection order."""
    return _rows(scan.detections, vocab, emb, fallback_rng_seed)


def sequence_order(detections: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    """Strongest first; equal RSSI falls back to ascending BSSID."""
    return sorted(detections, key=lambda d: (-d[1], canonical_bssid(d[0])))


def encode_sequence(scan: Scan, vocab: Vocabulary, emb: EmbeddingTable, seed: int = 0) -> Tensor:
    return _rows(sequence_order(scan.detections), vocab, emb, seed)


def encode_fixed_vector(scan: Scan, vocab: Vocabulary, fill: float = RSSI_FLOOR) -> np.ndarray:
    """Length-B dBm vector in vocabulary order; undetected entries get ``fill``.

    Out-of-vocabulary BSSIDs are dropped. A BSSID reported twice keeps its
    strongest reading.
    """
    x = np.full(vocab.size, fill, dtype=float)
    hit = np.zeros(vocab.size, dtype=bool)
    for bssid, rssi in scan.detections:
        j = vocab.index(bssid)
        if j is None:
            continue
        x[j] = rssi if not hit[j] else max(x[j], rssi)
        hit[j] = True
    return x


@dataclass
class MinMaxScaler:
    """Global min-max bounds over the training feature matrix."""

    lo: float = RSSI_FLOOR
    hi: float = 0.0

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "MinMaxScaler":
        lo, hi = float(np.min(vectors)), float(np.max(vectors))
        if hi <= lo:
            hi = lo + 1.0
        return cls(lo, hi)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)
