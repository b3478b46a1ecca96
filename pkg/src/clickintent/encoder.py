"""Toy trainable query encoder: hashed token table + 2-layer tanh MLP.

Stands in for a transformer encoder so the loss machinery can be verified
at desk scale with hand-derived gradients. A query embedding is the mean
of its token vectors pushed through dense(d->h, tanh) then dense(h->d).
Mean pooling is order-invariant by construction; that is a documented
limitation of the toy encoder, not a bug.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass

import numpy as np

_TOKEN_RE = re.compile(r"[0-9a-z]+")
OOV_TOKEN_ID = 0

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Tokenizer:
    """Deterministic hashing tokenizer (lowercase, split on non-alphanumerics)."""

    vocab_size: int = 32768

    def tokens(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def encode(self, text: str) -> list[int]:
        ids = [zlib.crc32(t.encode("utf-8")) % self.vocab_size for t in self.tokens(text)]
        return ids or [OOV_TOKEN_ID]


@dataclass
class EncoderParams:
    """Trainable parameters: token table plus the two MLP layers."""

    token_table: np.ndarray  # (V, d)
    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (d, h)
    b2: np.ndarray  # (d,)
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.token_table.shape[0]

    @property
    def dim(self) -> int:
        return self.token_table.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, vocab_size: int = 32768, dim: int = 64, hidden: int = 128,
             seed: int = 0, scale: float = 0.05) -> "EncoderParams":
        if dim < 2:
            raise ValueError("dim must be >= 2")
        rng = np.random.default_rng(seed)
        return cls(
            token_table=rng.uniform(-scale, scale, size=(vocab_size, dim)),
            w1=rng.uniform(-scale, scale, size=(hidden, dim)),
            b1=rng.uniform(-scale, scale, size=hidden),
            w2=rng.uniform(-scale, scale, size=(dim, hidden)),
            b2=rng.uniform(-scale, scale, size=dim),
            seed=seed,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"token_table": self.token_table, "w1": self.w1, "b1": self.b1,
                "w2": self.w2, "b2": self.b2}

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.token_table.copy(), self.w1.copy(), self.b1.copy(),
                             self.w2.copy(), self.b2.copy(), self.seed)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def with_flat(self, flat: np.ndarray) -> "EncoderParams":
        out = {}
        pos = 0
        for name, a in self.arrays().items():
            out[name] = flat[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return EncoderParams(seed=self.seed, **out)


@dataclass
class ForwardCache:
    token_ids: list[int]
    pooled: np.ndarray
    hidden_act: np.ndarray


def encode(params: EncoderParams, query: str, tokenizer: Tokenizer | None = None,
           cache: bool = False):
    """Embed one query; pure function of (params, query)."""
    tok = tokenizer or Tokenizer(params.vocab_size)
    ids = tok.encode(query)
    x = params.token_table[ids].mean(axis=0)
    h = np.tanh(params.w1 @ x + params.b1)
    out = params.w2 @ h + params.b2
    if cache:
        return out, ForwardCache(ids, x, h)
    return out


def encode_batch(params: EncoderParams, queries: list[str],
                 tokenizer: Tokenizer | None = None):
    """Embed a list of queries; returns (matrix (n, d), caches)."""
    tok = tokenizer or Tokenizer(params.vocab_size)
    embs = np.empty((len(queries), params.dim))
    caches = []
    for i, q in enumerate(queries):
        embs[i], c = encode(params, q, tok, cache=True)
        caches.append(c)
    return embs, caches


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(a) for name, a in params.arrays().items()}


def backward(params: EncoderParams, caches: list[ForwardCache],
             d_embeddings: np.ndarray,
             grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients given dLoss/dEmbedding per query."""
    g = grads if grads is not None else zero_grads(params)
    for cache, dout in zip(caches, np.asarray(d_embeddings, dtype=float)):
        g["w2"] += np.outer(dout, cache.hidden_act)
        g["b2"] += dout
        dh = params.w2.T @ dout
        dpre = dh * (1.0 - cache.hidden_act ** 2)
        g["w1"] += np.outer(dpre, cache.pooled)
        g["b1"] += dpre
        dx = params.w1.T @ dpre
        share = dx / len(cache.token_ids)
        for tid in cache.token_ids:
            g["token_table"][tid] += share
    return g


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: EncoderParams | dict[str, np.ndarray]) -> "AdamState":
        arrays = params.arrays() if isinstance(params, EncoderParams) else params
        return cls(m={k: np.zeros_like(a) for k, a in arrays.items()},
                   v={k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float = 1e-3, betas=(0.9, 0.999),
              eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction."""
    b1, b2 = betas
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise FloatingPointError(
                f"non-finite gradient for {name!r}: {bad} bad entries at step {state.t + 1}")
    state.t += 1
    for name, g in grads.items():
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        arrays[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def finite_diff_grad(loss_fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, per coordinate."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn(x)
        flat[i] = orig - h
        f_minus = loss_fn(x)
        flat[i] = orig
        grad.ravel()[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: EncoderParams, path) -> None:
    meta = {"version": CHECKPOINT_VERSION, "vocab_size": params.vocab_size,
            "dim": params.dim, "hidden": params.hidden, "seed": params.seed}
    np.savez_compressed(path, meta=json.dumps(meta), **params.arrays())


def load_checkpoint(path) -> EncoderParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('version')}")
        return EncoderParams(token_table=data["token_table"], w1=data["w1"],
                             b1=data["b1"], w2=data["w2"], b2=data["b2"],
                             seed=int(meta["seed"]))
