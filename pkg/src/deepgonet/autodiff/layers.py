"""Layer primitives with hand-written backward passes.

Conventions: sequences are laid out batch x length x channels; masks are
batch x length with 1 on real residues and 0 on padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor, _sigmoid, as_tensor, matmul, relu, sigmoid

BCE_EPS = 1e-7


def embedding(indices: np.ndarray, table: Tensor) -> Tensor:
    """Row gather ``table[indices]``; gradients scatter-add into the table."""
    indices = np.asarray(indices)
    vocab, dim = table.shape
    if indices.size and (indices.min() < 0 or indices.max() >= vocab):
        raise ShapeError(f"embedding index out of range 0..{vocab - 1}")
    flat = indices.reshape(-1)

    def backward(g):
        # one-hot matmul instead of np.add.at, which is far slower
        onehot = (flat[:, None] == np.arange(vocab)).astype(g.dtype)
        table._accumulate(onehot.T @ g.reshape(-1, dim))
    return Tensor(table.data[indices], _parents=(table,), _backward=backward, op="embedding")


def conv1d_same(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation along the length axis with zero 'same' padding.

    weight is K x Cin x Cout with K odd.
    """
    k, cin, cout = weight.shape
    if k % 2 == 0:
        raise ConfigError(f"conv kernel size must be odd, got {k}")
    if x.data.ndim != 3 or x.shape[2] != cin:
        raise ShapeError(f"conv input {x.shape} does not match weight {weight.shape}")
    b, length, _ = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    w = weight.data
    out = np.broadcast_to(bias.data, (b, length, cout)).copy()
    for j in range(k):
        out += xp[:, j:j + length] @ w[j]

    def backward(g):
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + length] += g @ w[j].T
            x._accumulate(dxp[:, pad:pad + length])
        if weight.requires_grad:
            g2 = g.reshape(-1, cout)
            dw = np.stack([xp[:, j:j + length].reshape(-1, cin).T @ g2 for j in range(k)])
            weight._accumulate(dw)
        bias._accumulate(g.sum(axis=(0, 1)))
    return Tensor(out, _parents=(x, weight, bias), _backward=backward, op="conv1d")


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    count: int = 0
    momentum: float = 0.1

    @classmethod
    def zeros(cls, channels: int, dtype=np.float32, momentum: float = 0.1) -> RunningStats:
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype), 0, momentum)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats | None,
              mode: str = "train", eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over every non-channel axis."""
    c = x.shape[-1]
    axes = tuple(range(x.data.ndim - 1))
    n = x.data.size // c
    if mode == "train":
        if n <= 1:
            raise ShapeError("batchnorm in train mode needs more than one value per channel")
        mu = x.data.mean(axis=axes)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes)
        if stats is not None:
            m = stats.momentum
            stats.mean = ((1 - m) * stats.mean + m * mu).astype(stats.mean.dtype)
            stats.var = ((1 - m) * stats.var + m * var * n / (n - 1)).astype(stats.var.dtype)
            stats.count += 1
    elif mode == "eval":
        if stats is None or stats.count == 0:
            raise ShapeError("batchnorm eval mode needs running statistics from a train step")
        mu, var = stats.mean.astype(x.dtype), stats.var.astype(x.dtype)
        centered = x.data - mu
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        gamma._accumulate((g * xhat).sum(axis=axes))
        beta._accumulate(g.sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data
        if mode == "train":
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=axes)
                                - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            dx = dxhat * inv_std
        x._accumulate(dx)
    return Tensor(out, _parents=(x, gamma, beta), _backward=backward, op="batchnorm")


@dataclass
class GRUWeights:
    """Gate blocks are laid out [update z | reset r | candidate] along the last axis."""

    W: Parameter  # I x 3H
    U: Parameter  # H x 3H
    b: Parameter  # 3H

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.U, self.b]


def _gru_step(xw: np.ndarray, h: np.ndarray, U: np.ndarray, b: np.ndarray):
    """One GRU update from a precomputed input projection ``xw = x @ W``."""
    H = h.shape[1]
    zr = _sigmoid(xw[:, :2 * H] + h @ U[:, :2 * H] + b[:2 * H])
    z, r = zr[:, :H], zr[:, H:]
    rh = r * h
    cand = np.tanh(xw[:, 2 * H:] + rh @ U[:, 2 * H:] + b[2 * H:])
    h_new = (1 - z) * h + z * cand
    return h_new, (h, z, r, rh, cand)


def _gru_step_backward(dh_new: np.ndarray, cache, U: np.ndarray):
    """Returns (d xw, d h_prev, d U, d b) for one step."""
    h, z, r, rh, cand = cache
    H = h.shape[1]
    dz = dh_new * (cand - h)
    dcand = dh_new * z
    dh = dh_new * (1 - z)
    da_c = dcand * (1 - cand * cand)
    drh = da_c @ U[:, 2 * H:].T
    dh += drh * r
    dr = drh * h
    da_zr = np.concatenate([dz * z * (1 - z), dr * r * (1 - r)], axis=1)
    dh += da_zr @ U[:, :2 * H].T
    dxw = np.concatenate([da_zr, da_c], axis=1)
    dU = np.concatenate([h.T @ da_zr, rh.T @ da_c], axis=1)
    return dxw, dh, dU, dxw.sum(axis=0)


def gru_cell(x: Tensor, h_prev: Tensor, weights: GRUWeights) -> Tensor:
    x, h_prev = as_tensor(x), as_tensor(h_prev, x.dtype)
    W, U, b = weights.W, weights.U, weights.b
    if x.shape[1] != W.shape[0] or h_prev.shape[1] != U.shape[0] or x.shape[0] != h_prev.shape[0]:
        raise ShapeError(f"gru_cell shapes x{x.shape} h{h_prev.shape} W{W.shape} U{U.shape}")
    xw = x.data @ W.data
    h_new, cache = _gru_step(xw, h_prev.data, U.data, b.data)

    def backward(g):
        dxw, dh, dU, db = _gru_step_backward(g, cache, U.data)
        x._accumulate(dxw @ W.data.T)
        h_prev._accumulate(dh)
        W._accumulate(x.data.T @ dxw)
        U._accumulate(dU)
        b._accumulate(db)
    return Tensor(h_new, _parents=(x, h_prev, W, U, b), _backward=backward, op="gru_cell")


def _scan(xw: np.ndarray, mask: np.ndarray, U: np.ndarray, b: np.ndarray, reverse: bool):
    B, L, _ = xw.shape
    H = U.shape[0]
    h = np.zeros((B, H), dtype=xw.dtype)
    outs = np.empty((B, L, H), dtype=xw.dtype)
    caches = [None] * L
    steps = range(L - 1, -1, -1) if reverse else range(L)
    for t in steps:
        m = mask[:, t:t + 1]
        h_new, caches[t] = _gru_step(xw[:, t], h, U, b)
        # padded positions carry the previous state through unchanged
        h = np.where(m, h_new, h)
        outs[:, t] = h
    return outs, caches


def _scan_backward(g: np.ndarray, mask: np.ndarray, caches, U: np.ndarray, reverse: bool):
    B, L, H = g.shape
    dxw = np.zeros((B, L, 3 * H), dtype=g.dtype)
    dU = np.zeros_like(U)
    db = np.zeros(3 * H, dtype=g.dtype)
    dh = np.zeros((B, H), dtype=g.dtype)
    steps = range(L) if reverse else range(L - 1, -1, -1)
    for t in steps:
        m = mask[:, t:t + 1].astype(g.dtype)
        dh = dh + g[:, t]
        d_step, dh_prev, dU_t, db_t = _gru_step_backward(dh * m, caches[t], U)
        dxw[:, t] = d_step
        dU += dU_t
        db += db_t
        dh = dh_prev + dh * (1 - m)
    return dxw, dU, db


def bigru(x: Tensor, mask: np.ndarray, fwd: GRUWeights, bwd: GRUWeights) -> Tensor:
    """Bidirectional GRU; output is [forward state | backward state] per position."""
    if x.data.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError(f"bigru input {x.shape} vs mask {mask.shape}")
    B, L, I = x.shape
    mask = np.asarray(mask).astype(bool)
    x2 = x.data.reshape(-1, I)
    results = []
    for weights, reverse in ((fwd, False), (bwd, True)):
        xw = (x2 @ weights.W.data).reshape(B, L, -1)
        results.append(_scan(xw, mask, weights.U.data, weights.b.data, reverse))
    H = fwd.hidden
    out = np.concatenate([results[0][0], results[1][0]], axis=2)

    def backward(g):
        dx = np.zeros_like(x.data)
        for (weights, reverse), (_, caches), gs in zip(
                ((fwd, False), (bwd, True)), results, (g[..., :H], g[..., H:])):
            dxw, dU, db = _scan_backward(gs, mask, caches, weights.U.data, reverse)
            dxw2 = dxw.reshape(-1, dxw.shape[-1])
            weights.W._accumulate(x2.T @ dxw2)
            weights.U._accumulate(dU)
            weights.b._accumulate(db)
            dx += (dxw2 @ weights.W.data.T).reshape(x.shape)
        x._accumulate(dx)
    params = (x, *fwd.parameters(), *bwd.parameters())
    return Tensor(out, _parents=params, _backward=backward, op="bigru")


def masked_mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    m = np.asarray(mask).astype(x.dtype)
    if m.shape != x.shape[:2]:
        raise ShapeError(f"pool input {x.shape} vs mask {m.shape}")
    count = m.sum(axis=1, keepdims=True)
    if np.any(count == 0):
        raise ShapeError("masked_mean_pool: a row has no unmasked positions")
    w = (m / count)[:, :, None]

    def backward(g):
        x._accumulate(g[:, None, :] * w)
    return Tensor((x.data * w).sum(axis=1), _parents=(x,), _backward=backward, op="pool")


def dense(x: Tensor, weight: Tensor, bias: Tensor, activation: str = "none") -> Tensor:
    out = matmul(x, weight) + bias
    if activation == "relu":
        return relu(out)
    if activation == "sigmoid":
        return sigmoid(out)
    if activation == "none":
        return out
    raise ConfigError(f"unknown activation {activation!r}")


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1 - rate) at train time."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return x * keep


def bce_loss(pred: Tensor, target: np.ndarray, eps: float = BCE_EPS) -> Tensor:
    """Summed-over-labels, batch-averaged binary cross-entropy."""
    y = np.asarray(target).astype(pred.dtype)
    if y.shape != pred.shape or pred.data.ndim != 2:
        raise ShapeError(f"loss shape mismatch: pred {pred.shape} vs target {y.shape}")
    m = pred.shape[0]
    p = np.clip(pred.data, eps, 1 - eps)
    loss = -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum() / m
    inside = (pred.data >= eps) & (pred.data <= 1 - eps)

    def backward(g):
        pred._accumulate(g * inside * (-(y / p) + (1 - y) / (1 - p)) / m)
    return Tensor(np.asarray(loss, dtype=pred.dtype), _parents=(pred,), _backward=backward,
                  op="bce")
