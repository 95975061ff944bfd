"""Query encoder: closed-grammar tokenizer, sinusoidal positions, a small
transformer encoder, and the unit-norm aggregate embedding read from the
leading ``<ENC>`` token."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear

ENC, UNK, PAD = 0, 1, 2

_GRAMMAR_WORDS = ("the", "all", "red", "green", "blue",
                  "circle", "circles", "square", "squares",
                  "triangle", "triangles", "shape", "shapes")


@dataclass
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        return self._ids.get(word.lower(), UNK)

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls(tokens=("<ENC>", "<UNK>", "<PAD>") + _GRAMMAR_WORDS)


@dataclass
class TextEncoderConfig:
    embed_dim: int = 64
    heads: int = 2
    layers: int = 1
    ffn_dim: int = 128
    max_len: int = 8

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed dim {self.embed_dim} not divisible by {self.heads} heads")


def tokenize(text: str, vocab: Vocabulary, max_len: int = 8) -> list[int]:
    """Lowercase whitespace tokens to ids, unknowns to ``<UNK>``, with the
    ``<ENC>`` aggregation token prepended; truncated to ``max_len``."""
    ids = [ENC] + [vocab.id_of(w) for w in text.split()]
    return ids[:max_len]


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """The fixed sin/cos position table, [length, dim]."""
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


class MultiHeadAttention:
    """Bidirectional self-attention; an optional key mask (True = masked)
    removes padded positions from every query's softmax."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads != 0:
            raise T.ShapeError(f"attention dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(dim, dim, rng=rng, dtype=dtype)
        self.k = Linear(dim, dim, rng=rng, dtype=dtype)
        self.v = Linear(dim, dim, rng=rng, dtype=dtype)
        self.o = Linear(dim, dim, rng=rng, dtype=dtype)

    def __call__(self, x: T.Tensor, key_mask: np.ndarray | None = None) -> T.Tensor:
        length, dim = x.shape
        h, hd = self.heads, self.head_dim

        def split(t: T.Tensor) -> T.Tensor:  # [L, dim] -> [h, L, hd]
            return T.permute(T.reshape(t, (length, h, hd)), (1, 0, 2))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = T.scale(T.matmul(q, T.permute(k, (0, 2, 1))), 1.0 / np.sqrt(hd))
        if key_mask is not None:
            bias = np.where(np.asarray(key_mask, dtype=bool), -1e9, 0.0)
            scores = T.add(scores, T.constant(
                np.broadcast_to(bias, (h, length, length)).copy(), like=scores))
        attn = T.softmax_lastdim(scores)
        mixed = T.reshape(T.permute(T.matmul(attn, v), (1, 0, 2)), (length, dim))
        return self.o(mixed)

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        for name, lin in (("q", self.q), ("k", self.k), ("v", self.v), ("o", self.o)):
            out.update(lin.params(f"{prefix}.{name}"))
        return out


class EncoderLayer:
    """Post-norm transformer block: attention and FFN sublayers, each wrapped
    in residual + layer norm."""

    def __init__(self, cfg: TextEncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.attn = MultiHeadAttention(cfg.embed_dim, cfg.heads, rng=rng, dtype=dtype)
        self.ln1 = LayerNorm(cfg.embed_dim, dtype=dtype)
        self.fc1 = Linear(cfg.embed_dim, cfg.ffn_dim, rng=rng, dtype=dtype)
        self.fc2 = Linear(cfg.ffn_dim, cfg.embed_dim, rng=rng, dtype=dtype)
        self.ln2 = LayerNorm(cfg.embed_dim, dtype=dtype)

    def __call__(self, x: T.Tensor, key_mask: np.ndarray | None = None) -> T.Tensor:
        x = self.ln1(T.add(x, self.attn(x, key_mask)))
        return self.ln2(T.add(x, self.fc2(T.relu(self.fc1(x)))))

    def params(self, prefix: str) -> dict[str, T.Tensor]:
        out = self.attn.params(f"{prefix}.attn")
        out.update(self.ln1.params(f"{prefix}.ln1"))
        out.update(self.fc1.params(f"{prefix}.fc1"))
        out.update(self.fc2.params(f"{prefix}.fc2"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        return out


class TextEncoder:
    def __init__(self, vocab: Vocabulary, cfg: TextEncoderConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.vocab = vocab
        self.cfg = cfg
        # unit-variance components keep token identity on par with the
        # sinusoidal positions (norm ~ sqrt(d/2)); a smaller scale buries the
        # tokens under the position signal and queries become near-identical
        table = rng.standard_normal((len(vocab), cfg.embed_dim))
        self.embed = T.Tensor(table.astype(dtype), requires_grad=True)
        self.layers = [EncoderLayer(cfg, rng=rng, dtype=dtype) for _ in range(cfg.layers)]
        self._pe = sinusoidal_positions(cfg.max_len, cfg.embed_dim).astype(dtype)

    def __call__(self, token_ids: list[int]) -> T.Tensor:
        """Token ids to the [1, d_t] unit-norm query embedding. ``<PAD>``
        positions are masked out of attention, so padded and unpadded forms
        of a sequence encode identically."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise T.ShapeError("encoder expects a non-empty 1-D token sequence")
        if ids.size > self.cfg.max_len:
            raise ValueError(f"sequence of {ids.size} tokens exceeds max length {self.cfg.max_len}")
        x = T.add(T.gather_rows(self.embed, ids),
                  T.constant(self._pe[:ids.size], like=self.embed))
        mask = ids == PAD
        for layer in self.layers:
            x = layer(x, key_mask=mask if mask.any() else None)
        return T.l2_normalize(T.gather_rows(x, np.array([0])))

    def encode_text(self, text: str) -> T.Tensor:
        return self(tokenize(text, self.vocab, self.cfg.max_len))

    def params(self, prefix: str = "text") -> dict[str, T.Tensor]:
        out = {f"{prefix}.embed.w": self.embed}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.layer{i}"))
        return out
