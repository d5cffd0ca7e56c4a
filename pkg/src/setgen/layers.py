"""Differentiable building blocks: MLP, FiLM, transformer block, PNA pooling,
layer normalization, Adam, and a reduce-on-plateau scheduler.

All forward functions accept a single set (rank-2 ``n x c``) or a batch of
same-size sets (rank-3 ``b x n x c``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import ContractError, ShapeError


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


@dataclass
class Linear:
    w: Tensor
    b: Tensor

    @staticmethod
    def create(rng: Rng, fan_in: int, fan_out: int) -> "Linear":
        return Linear(
            w=Tensor(glorot_uniform(rng, fan_in, fan_out), requires_grad=True),
            b=Tensor(np.zeros(fan_out), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self, prefix: str = ""):
        return [(prefix + "w", self.w), (prefix + "b", self.b)]


@dataclass
class MlpParams:
    layers: list[Linear]
    activation: str = "relu"

    @staticmethod
    def create(rng: Rng, dims: list[int], activation: str = "relu") -> "MlpParams":
        layers = [Linear.create(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        return MlpParams(layers=layers, activation=activation)

    def params(self, prefix: str = ""):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.params(f"{prefix}l{i}.")
        return out


_ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid}


def mlp_forward(p: MlpParams, x: Tensor) -> Tensor:
    """Affine-activation chain; no activation after the final layer."""
    act = _ACTIVATIONS[p.activation]
    for i, layer in enumerate(p.layers):
        x = layer(x)
        if i < len(p.layers) - 1:
            x = act(x)
    return x


@dataclass
class FilmParams:
    """Feature-wise affine modulation: x * scale(cond) + shift(cond)."""

    wm: Tensor  # cond_dim x c, scale map
    wb: Tensor  # cond_dim x c, shift map

    @staticmethod
    def create(rng: Rng, cond_dim: int, c: int) -> "FilmParams":
        return FilmParams(
            wm=Tensor(glorot_uniform(rng, cond_dim, c), requires_grad=True),
            wb=Tensor(glorot_uniform(rng, cond_dim, c), requires_grad=True),
        )

    def params(self, prefix: str = ""):
        return [(prefix + "wm", self.wm), (prefix + "wb", self.wb)]


def film(p: FilmParams, x: Tensor, cond: Tensor) -> Tensor:
    """Row-broadcast modulation of x by an affine function of cond.

    cond is rank-1 for a rank-2 x, or rank-2 (one row per batch element)
    for a rank-3 x.
    """
    if cond.ndim == 1:
        cond2 = ad.reshape(cond, (1, cond.shape[0]))
    elif cond.ndim == 2 and x.ndim == 3:
        cond2 = cond
    else:
        raise ShapeError(f"film: cond rank {cond.ndim} with x rank {x.ndim}")
    if cond2.shape[-1] != p.wm.shape[0]:
        raise ShapeError("film: cond length does not match the modulation maps")
    scale = ad.matmul(cond2, p.wm)
    shift = ad.matmul(cond2, p.wb)
    if x.ndim == 3:
        b, c = scale.shape
        scale = ad.reshape(scale, (b, 1, c))
        shift = ad.reshape(shift, (b, 1, c))
    return ad.add(ad.mul(x, scale), shift)


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor
    eps: float = 1e-5

    @staticmethod
    def create(c: int) -> "LayerNormParams":
        return LayerNormParams(
            gain=Tensor(np.ones(c), requires_grad=True),
            bias=Tensor(np.zeros(c), requires_grad=True),
        )

    def params(self, prefix: str = ""):
        return [(prefix + "gain", self.gain), (prefix + "bias", self.bias)]


def layer_norm(p: LayerNormParams, x: Tensor) -> Tensor:
    mu = ad.mean(x, axis=-1, keepdims=True)
    centered = ad.add(x, ad.neg(mu))
    var = ad.mean(ad.square(centered), axis=-1, keepdims=True)
    inv = ad.reciprocal(ad.sqrt(ad.add(var, p.eps)))
    return ad.add(ad.mul(ad.mul(centered, inv), p.gain), p.bias)


@dataclass
class TransformerParams:
    """One pre-norm self-attention block with residual connections."""

    wq: Linear
    wk: Linear
    wv: Linear
    wo: Linear
    ffn: MlpParams
    ln1: LayerNormParams
    ln2: LayerNormParams
    heads: int

    @staticmethod
    def create(rng: Rng, c: int, heads: int = 4) -> "TransformerParams":
        if c % heads != 0:
            raise ContractError(f"width {c} not divisible by {heads} heads")
        return TransformerParams(
            wq=Linear.create(rng, c, c),
            wk=Linear.create(rng, c, c),
            wv=Linear.create(rng, c, c),
            wo=Linear.create(rng, c, c),
            ffn=MlpParams.create(rng, [c, 4 * c, c]),
            ln1=LayerNormParams.create(c),
            ln2=LayerNormParams.create(c),
            heads=heads,
        )

    def params(self, prefix: str = ""):
        out = []
        out += self.wq.params(prefix + "q.")
        out += self.wk.params(prefix + "k.")
        out += self.wv.params(prefix + "v.")
        out += self.wo.params(prefix + "o.")
        out += self.ffn.params(prefix + "ffn.")
        out += self.ln1.params(prefix + "ln1.")
        out += self.ln2.params(prefix + "ln2.")
        return out


def _attention(p: TransformerParams, x: Tensor) -> Tensor:
    c = x.shape[-1]
    dh = c // p.heads
    q = p.wq(x)
    k = p.wk(x)
    v = p.wv(x)
    scale = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(p.heads):
        qh = ad.narrow(q, -1, h * dh, dh)
        kh = ad.narrow(k, -1, h * dh, dh)
        vh = ad.narrow(v, -1, h * dh, dh)
        scores = ad.mul(ad.matmul(qh, ad.transpose(kh)), scale)
        att = ad.softmax_lastdim(scores)
        outs.append(ad.matmul(att, vh))
    return p.wo(ad.concat(outs, axis=-1))


def transformer_block(p: TransformerParams, x: Tensor) -> Tensor:
    """Permutation-equivariant self-attention block (pre-norm residuals)."""
    if x.shape[-1] != p.wq.w.shape[0]:
        raise ShapeError(
            f"transformer width mismatch: {x.shape[-1]} vs {p.wq.w.shape[0]}")
    h = ad.add(x, _attention(p, layer_norm(p.ln1, x)))
    return ad.add(h, mlp_forward(p.ffn, layer_norm(p.ln2, h)))


def pna_pool(x: Tensor) -> Tensor:
    """Concatenated [sum, mean, max, std] over the set axis, per channel.

    Permutation invariant; std is the population std (zero for n = 1).
    """
    axis = 0 if x.ndim == 2 else 1
    parts = [
        ad.sum(x, axis=axis),
        ad.mean(x, axis=axis),
        ad.max(x, axis=axis),
        ad.std(x, axis=axis),
    ]
    return ad.concat(parts, axis=-1)


# -- optimization ---------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Tensor],
              grads: list[np.ndarray] | None = None) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    if grads is None:
        grads = []
        for p in params:
            if p.grad is None:
                raise ContractError("adam_step: parameter has no gradient")
            grads.append(p.grad)
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


class PlateauScheduler:
    """Halve the learning rate when the tracked loss stops improving."""

    def __init__(self, lr: float, patience: int, factor: float = 0.5,
                 rel_threshold: float = 1e-3, min_lr: float = 1e-6):
        if patience < 1:
            raise ContractError("patience must be >= 1")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.rel_threshold = rel_threshold
        self.min_lr = min_lr
        self.best: float | None = None
        self.bad_epochs = 0

    def step(self, loss: float) -> float:
        """Record one epoch's loss; returns the (possibly reduced) lr."""
        if self.best is None or loss < self.best - self.rel_threshold * abs(self.best):
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0  # cooldown: restart the count after a cut
        return self.lr


def plateau_scheduler(history: list[float], patience: int,
                      factor: float = 0.5, lr: float = 2e-4,
                      rel_threshold: float = 1e-3, min_lr: float = 1e-6) -> float:
    """Replay a loss history through the plateau rule; returns the final lr."""
    sched = PlateauScheduler(lr, patience, factor, rel_threshold, min_lr)
    for loss in history:
        sched.step(loss)
    return sched.lr
