"""MLP, RNN, LSTM, single-query attention and Set Transformer localizers.

All models map one scan to a normalized (x, y) estimate and, when built with
``multi_task=True``, logits over domain classes (floor or building).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Scan
from .encoding import (
    DEFAULT_DIM,
    EmbeddingTable,
    MinMaxScaler,
    Vocabulary,
    build_vocabulary,
    encode_fixed_vector,
    encode_sequence,
    encode_set,
)

ARCHS = ("mlp", "rnn", "lstm", "attention", "set_transformer")

# Widths chosen so every architecture lands near 26k trainable parameters on
# a 20-BSSID vocabulary; see test_parameter_parity.
DEFAULT_HIDDEN = {"mlp": 150, "rnn": 150, "lstm": 72, "attention": 150, "set_transformer": 32}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    arch: str
    d: int = DEFAULT_DIM
    hidden: int | None = None
    width: int = 32
    heads: int = 4
    sab_blocks: int = 2
    ff_mult: int = 2
    multi_task: bool = False
    num_classes: int = 0
    seed: int = 0
    fallback_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose from {', '.join(ARCHS)}")
        if self.hidden is None:
            self.hidden = DEFAULT_HIDDEN[self.arch]
        if self.arch == "set_transformer":
            if self.sab_blocks < 1:
                raise ConfigError("set_transformer needs at least one SAB block")
            if self.heads < 1 or self.width % self.heads:
                raise ConfigError(f"model width {self.width} is not divisible by {self.heads} heads")
        if self.multi_task and self.num_classes and self.num_classes < 2:
            raise ConfigError(f"multi-task head needs num_classes >= 2, got {self.num_classes}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prediction:
    position_norm: Tensor
    class_logits: Tensor | None = None

    @property
    def xy(self) -> np.ndarray:
        return self.position_norm.data


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = ag.parameter(rng.uniform(-bound, bound, (n_in, n_out)), f"{name}.weight")
        self.bias = ag.parameter(rng.uniform(-bound, bound, n_out), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(ag.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class LayerNorm:
    def __init__(self, dim: int, name: str):
        self.gain = ag.parameter(np.ones(dim), f"{name}.gain")
        self.shift = ag.parameter(np.zeros(dim), f"{name}.shift")

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(ag.mul(ag.layernorm(x), self.gain), self.shift)

    def parameters(self) -> list[Tensor]:
        return [self.gain, self.shift]


class Localizer:
    """Shared plumbing: vocabulary, parameters, encode-then-forward."""

    uses_embedding = True

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        self.rng = np.random.default_rng(config.seed)
        self.embedding = (EmbeddingTable(vocab.size, config.d, rng=self.rng)
                          if self.uses_embedding else None)
        self.class_head: Linear | None = None

    @property
    def in_dim(self) -> int:
        return self.config.d + 1

    def _init_class_head(self, rep_dim: int) -> None:
        if self.config.multi_task:
            if self.config.num_classes < 2:
                raise ConfigError(f"multi-task head needs num_classes >= 2, got {self.config.num_classes}")
            self.class_head = Linear(rep_dim, self.config.num_classes, self.rng, "class_head")

    def _layers(self) -> list:
        return []

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params = []
        if self.embedding is not None:
            params.append(self.embedding.weights)
        for layer in self._layers():
            params.extend(layer.parameters() if hasattr(layer, "parameters") else [layer])
        if self.class_head is not None:
            params.extend(self.class_head.parameters())
        return [(p.name, p) for p in params]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            if state[name].shape != p.shape:
                raise ag.ShapeError(f"{name}: expected shape {p.shape}, got {state[name].shape}")
            p.data[...] = state[name]

    def encode(self, scan: Scan):
        raise NotImplementedError

    def forward(self, inputs) -> Prediction:
        raise NotImplementedError

    def _predict(self, rep: Tensor, position: Tensor) -> Prediction:
        logits = self.class_head(rep) if self.class_head is not None else None
        return Prediction(position, logits)

    def __call__(self, scan: Scan) -> Prediction:
        return self.forward(self.encode(scan))


class MLPLocalizer(Localizer):
    """Three dense layers over the fixed-order RSSI vector."""

    uses_embedding = False

    def __init__(self, config: ModelConfig, vocab: Vocabulary, scaler: MinMaxScaler | None = None):
        super().__init__(config, vocab)
        h = config.hidden
        self.scaler = scaler or MinMaxScaler()
        self.fc1 = Linear(vocab.size, h, self.rng, "fc1")
        self.fc2 = Linear(h, h, self.rng, "fc2")
        self.out = Linear(h, 2, self.rng, "out")
        self._init_class_head(h)

    def _layers(self):
        return [self.fc1, self.fc2, self.out]

    def encode(self, scan: Scan) -> Tensor:
        return Tensor(self.scaler.transform(encode_fixed_vector(scan, self.vocab)))

    def forward(self, x) -> Prediction:
        x = ag.as_tensor(x)
        if x.shape != (self.vocab.size,):
            raise ag.ShapeError(f"MLP expects an input of length {self.vocab.size}, got {x.shape}")
        h1 = ag.relu(self.fc1(x))
        h2 = ag.relu(self.fc2(h1))
        return self._predict(h2, self.out(h2))


def _check_nonempty(rows: Tensor) -> None:
    if rows.data.ndim != 2 or rows.shape[0] < 1:
        raise ValueError(f"expected a non-empty n x d input, got shape {rows.shape}")


def canonical_rows(rows: Tensor) -> Tensor:
    """Reorder set elements lexicographically by value.

    Pooling sums then run in the same order for every permutation of the
    input, so set models are bit-for-bit permutation invariant.
    """
    order = np.lexsort(rows.data.T[::-1])
    if np.array_equal(order, np.arange(len(order))):
        return rows
    return ag.take_rows(rows, order)


class RNNLocalizer(Localizer):
    """Elman RNN over detections sorted by descending RSSI."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__(config, vocab)
        h = config.hidden
        bound = 1.0 / math.sqrt(h)
        self.w_in = ag.parameter(self.rng.uniform(-bound, bound, (self.in_dim, h)), "rnn.w_in")
        self.w_rec = ag.parameter(self.rng.uniform(-bound, bound, (h, h)), "rnn.w_rec")
        self.b = ag.parameter(self.rng.uniform(-bound, bound, h), "rnn.bias")
        self.out = Linear(h, 2, self.rng, "out")
        self._init_class_head(h)

    def _layers(self):
        return [self.w_in, self.w_rec, self.b, self.out]

    def encode(self, scan: Scan) -> Tensor:
        return encode_sequence(scan, self.vocab, self.embedding, self.config.fallback_seed)

    def forward(self, seq: Tensor) -> Prediction:
        _check_nonempty(seq)
        xw = ag.add(ag.matmul(seq, self.w_in), self.b)
        h = ag.tanh(xw[0])
        for t in range(1, seq.shape[0]):
            h = ag.tanh(ag.add(xw[t], ag.matmul(h, self.w_rec)))
        return self._predict(h, self.out(h))


class LSTMLocalizer(Localizer):
    """LSTM over detections sorted by descending RSSI; gate layout [i, f, o, g]."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__(config, vocab)
        h = config.hidden
        bound = 1.0 / math.sqrt(h)
        self.w_in = ag.parameter(self.rng.uniform(-bound, bound, (self.in_dim, 4 * h)), "lstm.w_in")
        self.w_rec = ag.parameter(self.rng.uniform(-bound, bound, (h, 4 * h)), "lstm.w_rec")
        bias = self.rng.uniform(-bound, bound, 4 * h)
        bias[h: 2 * h] += 1.0  # forget gate starts open
        self.b = ag.parameter(bias, "lstm.bias")
        self.out = Linear(h, 2, self.rng, "out")
        self._init_class_head(h)

    def _layers(self):
        return [self.w_in, self.w_rec, self.b, self.out]

    def encode(self, scan: Scan) -> Tensor:
        return encode_sequence(scan, self.vocab, self.embedding, self.config.fallback_seed)

    def cell(self, pre: Tensor, c: Tensor | None) -> tuple[Tensor, Tensor]:
        h = self.config.hidden
        gates = ag.sigmoid(pre[: 3 * h])
        i, f, o = gates[:h], gates[h: 2 * h], gates[2 * h:]
        g = ag.tanh(pre[3 * h:])
        c = ag.mul(i, g) if c is None else ag.add(ag.mul(f, c), ag.mul(i, g))
        return ag.mul(o, ag.tanh(c)), c

    def forward(self, seq: Tensor) -> Prediction:
        _check_nonempty(seq)
        xw = ag.add(ag.matmul(seq, self.w_in), self.b)
        h, c = self.cell(xw[0], None)
        for t in range(1, seq.shape[0]):
            h, c = self.cell(ag.add(xw[t], ag.matmul(h, self.w_rec)), c)
        return self._predict(h, self.out(h))


class AttentionLocalizer(Localizer):
    """Softmax pooling with one learned query, then a two-hidden-layer MLP."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__(config, vocab)
        h = config.hidden
        bound = 1.0 / math.sqrt(self.in_dim)
        self.query = ag.parameter(self.rng.uniform(-bound, bound, self.in_dim), "attn.query")
        self.fc1 = Linear(self.in_dim, h, self.rng, "fc1")
        self.fc2 = Linear(h, h, self.rng, "fc2")
        self.out = Linear(h, 2, self.rng, "out")
        self._init_class_head(self.in_dim)

    def _layers(self):
        return [self.query, self.fc1, self.fc2, self.out]

    def encode(self, scan: Scan) -> Tensor:
        return encode_set(scan, self.vocab, self.embedding, self.config.fallback_seed)

    def pool(self, rows: Tensor) -> tuple[Tensor, Tensor]:
        alpha = ag.softmax(ag.matmul(rows, self.query), axis=0)
        return ag.matmul(alpha, rows), alpha

    def forward(self, rows: Tensor) -> Prediction:
        _check_nonempty(rows)
        z, _ = self.pool(canonical_rows(rows))
        hidden = ag.relu(self.fc2(ag.relu(self.fc1(z))))
        return self._predict(z, self.out(hidden))


class MultiheadAttention:
    def __init__(self, width: int, heads: int, rng: np.random.Generator, name: str):
        self.width, self.heads = width, heads
        self.q = Linear(width, width, rng, f"{name}.q")
        self.k = Linear(width, width, rng, f"{name}.k")
        self.v = Linear(width, width, rng, f"{name}.v")
        self.o = Linear(width, width, rng, f"{name}.o")

    def parameters(self):
        return [p for lin in (self.q, self.k, self.v, self.o) for p in lin.parameters()]

    def __call__(self, queries: Tensor, keys: Tensor) -> Tensor:
        m, n = queries.shape[0], keys.shape[0]
        hd, dk = self.heads, self.width // self.heads
        q = ag.transpose(ag.reshape(self.q(queries), (m, hd, dk)), (1, 0, 2))
        k = ag.transpose(ag.reshape(self.k(keys), (n, hd, dk)), (1, 2, 0))
        v = ag.transpose(ag.reshape(self.v(keys), (n, hd, dk)), (1, 0, 2))
        scores = ag.mul(ag.matmul(q, k), 1.0 / math.sqrt(dk))
        mixed = ag.matmul(ag.softmax(scores, axis=-1), v)
        merged = ag.reshape(ag.transpose(mixed, (1, 0, 2)), (m, self.width))
        return self.o(merged)


class MAB:
    """Multihead attention block with post-norm residuals:
    H = LN(X + MHA(X, Y)); out = LN(H + FF(H))."""

    def __init__(self, width: int, heads: int, ff_mult: int, rng: np.random.Generator, name: str):
        self.attn = MultiheadAttention(width, heads, rng, f"{name}.attn")
        self.norm1 = LayerNorm(width, f"{name}.norm1")
        self.ff1 = Linear(width, ff_mult * width, rng, f"{name}.ff1")
        self.ff2 = Linear(ff_mult * width, width, rng, f"{name}.ff2")
        self.norm2 = LayerNorm(width, f"{name}.norm2")

    def parameters(self):
        parts = (self.attn, self.norm1, self.ff1, self.ff2, self.norm2)
        return [p for part in parts for p in part.parameters()]

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        h = self.norm1(ag.add(x, self.attn(x, y)))
        return self.norm2(ag.add(h, self.ff2(ag.relu(self.ff1(h)))))


class SetTransformerLocalizer(Localizer):
    """Input projection, stacked SABs, single-seed PMA and a dense head."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__(config, vocab)
        w = config.width
        self.proj = Linear(self.in_dim, w, self.rng, "proj")
        self.sabs = [MAB(w, config.heads, config.ff_mult, self.rng, f"sab{i}")
                     for i in range(config.sab_blocks)]
        self.seed = ag.parameter(self.rng.uniform(-1.0 / math.sqrt(w), 1.0 / math.sqrt(w), (1, w)),
                                 "pma.seed")
        self.pma = MAB(w, config.heads, config.ff_mult, self.rng, "pma")
        self.fc = Linear(w, config.hidden, self.rng, "fc")
        self.out = Linear(config.hidden, 2, self.rng, "out")
        self._init_class_head(w)

    def _layers(self):
        return [self.proj, *self.sabs, self.seed, self.pma, self.fc, self.out]

    def encode(self, scan: Scan) -> Tensor:
        return encode_set(scan, self.vocab, self.embedding, self.config.fallback_seed)

    def pool(self, rows: Tensor) -> Tensor:
        x = self.proj(rows)
        for sab in self.sabs:
            x = sab(x, x)
        return self.pma(self.seed, x)[0]

    def forward(self, rows: Tensor) -> Prediction:
        _check_nonempty(rows)
        pooled = self.pool(canonical_rows(rows))
        return self._predict(pooled, self.out(ag.relu(self.fc(pooled))))


MODEL_CLASSES = {
    "mlp": MLPLocalizer,
    "rnn": RNNLocalizer,
    "lstm": LSTMLocalizer,
    "attention": AttentionLocalizer,
    "set_transformer": SetTransformerLocalizer,
}


def build_model(config: ModelConfig, train_scans: Sequence[Scan] | None = None, *,
                vocab: Vocabulary | None = None) -> Localizer:
    """Construct a model; the vocabulary (and MLP input scaler) come from ``train_scans``."""
    if vocab is None:
        if train_scans is None:
            raise ValueError("need training scans or an explicit vocabulary")
        vocab = build_vocabulary(train_scans)
    if config.arch == "mlp":
        scaler = None
        if train_scans:
            scaler = MinMaxScaler.fit(np.stack([encode_fixed_vector(s, vocab) for s in train_scans]))
        return MLPLocalizer(config, vocab, scaler)
    return MODEL_CLASSES[config.arch](config, vocab)
