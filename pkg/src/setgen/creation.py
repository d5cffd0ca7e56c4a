"""The four creation mechanisms mapping a latent vector and a target size n
to an initial set: Top-n selection from a trainable reference set, First-n,
random i.i.d. draws, and a plain MLP.

Top-n computes an angle from the latent vector, ranks the reference rows by
cosine against it, keeps the n best, and modulates their representations
with softmaxed cosines so that gradients reach the angle table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import CapacityError, ContractError
from .layers import MlpParams, mlp_forward

ANGLE_NORM_FLOOR = 1e-8


@dataclass
class ReferenceSet:
    """Trainable pool of candidate points: representations and angles."""

    r: Tensor      # n0 x c
    theta: Tensor  # n0 x a

    @staticmethod
    def create(rng: Rng, n0: int, c: int, a: int) -> "ReferenceSet":
        theta = rng.normal((n0, a))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        return ReferenceSet(
            r=Tensor(rng.normal((n0, c)) * 0.1, requires_grad=True),
            theta=Tensor(theta, requires_grad=True),
        )

    @property
    def n0(self) -> int:
        return self.r.shape[0]

    def project_angles(self) -> None:
        """Restore the angle-row norm floor after an optimizer step."""
        norms = np.linalg.norm(self.theta.data, axis=1)
        for i, nrm in enumerate(norms):
            if nrm < ANGLE_NORM_FLOOR:
                if nrm == 0.0:
                    self.theta.data[i, 0] = ANGLE_NORM_FLOOR
                else:
                    self.theta.data[i] *= ANGLE_NORM_FLOOR / nrm

    def params(self, prefix: str = ""):
        return [(prefix + "r", self.r), (prefix + "theta", self.theta)]


@dataclass
class CreationOutput:
    x0: Tensor  # n x c
    selected_indices: list[int] | None = None


def condition_latent(x: Tensor, z: Tensor, w3: Tensor, w4: Tensor) -> Tensor:
    """Row-broadcast modulation x * (z W3) + (z W4).

    Equivalent to concatenating z to every row and applying one linear
    layer, at lower cost.
    """
    if z.ndim == 1:
        z2 = ad.reshape(z, (1, z.shape[0]))
    else:
        z2 = z
    scale = ad.matmul(z2, w3)
    shift = ad.matmul(z2, w4)
    if x.ndim == 3:
        b, c = scale.shape
        scale = ad.reshape(scale, (b, 1, c))
        shift = ad.reshape(shift, (b, 1, c))
    return ad.add(ad.mul(x, scale), shift)


@dataclass
class TopnParams:
    angle_mlp: MlpParams  # l -> a
    w1: Tensor  # 1 x c
    w2: Tensor  # 1 x c
    w3: Tensor  # l x c
    w4: Tensor  # l x c
    ref: ReferenceSet

    @staticmethod
    def create(rng: Rng, latent_dim: int, c: int, a: int, n0: int,
               angle_hidden: int = 64) -> "TopnParams":
        from .layers import glorot_uniform

        return TopnParams(
            angle_mlp=MlpParams.create(rng, [latent_dim, angle_hidden, a]),
            w1=Tensor(glorot_uniform(rng, 1, c), requires_grad=True),
            w2=Tensor(glorot_uniform(rng, 1, c), requires_grad=True),
            w3=Tensor(glorot_uniform(rng, latent_dim, c), requires_grad=True),
            w4=Tensor(glorot_uniform(rng, latent_dim, c), requires_grad=True),
            ref=ReferenceSet.create(rng, n0, c, a),
        )

    def params(self, prefix: str = ""):
        out = self.angle_mlp.params(prefix + "angle.")
        out += [(prefix + "w1", self.w1), (prefix + "w2", self.w2),
                (prefix + "w3", self.w3), (prefix + "w4", self.w4)]
        out += self.ref.params(prefix + "ref.")
        return out


def topn_select(cosines: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n largest cosines, descending; ties go to the lower
    index. Non-differentiable by design."""
    order = np.argsort(-cosines, kind="stable")
    return order[:n]


def create_topn(p: TopnParams, z: Tensor, n: int) -> CreationOutput:
    n0 = p.ref.n0
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    if n > n0:
        raise CapacityError(f"requested {n} points from a reference set of {n0}")

    z2 = ad.reshape(z, (1, z.shape[0]))
    angle = mlp_forward(p.angle_mlp, z2)              # 1 x a
    norms = ad.sqrt(ad.sum(ad.square(p.ref.theta), axis=1, keepdims=True))
    cos = ad.mul(ad.matmul(p.ref.theta, ad.transpose(angle)),
                 ad.reciprocal(norms))                # n0 x 1
    sel = topn_select(cos.data[:, 0], n)
    cos_sel = ad.gather_rows(cos, sel)                # n x 1
    ctilde = ad.transpose(ad.softmax_lastdim(ad.transpose(cos_sel)))  # n x 1
    x = ad.add(ad.mul(ad.gather_rows(p.ref.r, sel), ad.matmul(ctilde, p.w1)),
               ad.matmul(ctilde, p.w2))
    x = condition_latent(x, z, p.w3, p.w4)
    return CreationOutput(x0=x, selected_indices=[int(i) for i in sel])


@dataclass
class FirstnParams:
    ref: Tensor  # n_max x c
    w3: Tensor   # l x c
    w4: Tensor   # l x c

    @staticmethod
    def create(rng: Rng, latent_dim: int, c: int, n_max: int) -> "FirstnParams":
        from .layers import glorot_uniform

        return FirstnParams(
            ref=Tensor(rng.normal((n_max, c)) * 0.1, requires_grad=True),
            w3=Tensor(glorot_uniform(rng, latent_dim, c), requires_grad=True),
            w4=Tensor(glorot_uniform(rng, latent_dim, c), requires_grad=True),
        )

    def params(self, prefix: str = ""):
        return [(prefix + "ref", self.ref), (prefix + "w3", self.w3),
                (prefix + "w4", self.w4)]


def create_firstn(p: FirstnParams, z: Tensor, n: int) -> CreationOutput:
    n_max = p.ref.shape[0]
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    if n > n_max:
        raise CapacityError(f"requested {n} points from a reference of {n_max}")
    x = ad.narrow(p.ref, 0, 0, n)
    x = condition_latent(x, z, p.w3, p.w4)
    return CreationOutput(x0=x, selected_indices=list(range(n)))


@dataclass
class IidParams:
    lift_w: Tensor  # d_low x c
    lift_b: Tensor  # c
    w3: Tensor
    w4: Tensor
    d_low: int = 8

    @staticmethod
    def create(rng: Rng, latent_dim: int, c: int, d_low: int = 8) -> "IidParams":
        from .layers import glorot_uniform

        return IidParams(
            lift_w=Tensor(glorot_uniform(rng, d_low, c), requires_grad=True),
            lift_b=Tensor(np.zeros(c), requires_grad=True),
            w3=Tensor(glorot_uniform(rng, latent_dim, c), requires_grad=True),
            w4=Tensor(glorot_uniform(rng, latent_dim, c), requires_grad=True),
            d_low=d_low,
        )

    def params(self, prefix: str = ""):
        return [(prefix + "lw", self.lift_w), (prefix + "lb", self.lift_b),
                (prefix + "w3", self.w3), (prefix + "w4", self.w4)]


def create_iid(p: IidParams, z: Tensor, n: int, rng: Rng) -> CreationOutput:
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    draws = Tensor(rng.normal((n, p.d_low)))
    x = ad.add(ad.matmul(draws, p.lift_w), p.lift_b)
    x = condition_latent(x, z, p.w3, p.w4)
    return CreationOutput(x0=x, selected_indices=None)


@dataclass
class MlpCreatorParams:
    mlp: MlpParams  # l -> n_max * c
    n_max: int
    c: int

    @staticmethod
    def create(rng: Rng, latent_dim: int, c: int, n_max: int,
               hidden: int = 128) -> "MlpCreatorParams":
        return MlpCreatorParams(
            mlp=MlpParams.create(rng, [latent_dim, hidden, n_max * c]),
            n_max=n_max, c=c,
        )

    def params(self, prefix: str = ""):
        return self.mlp.params(prefix + "mlp.")


def create_mlp(p: MlpCreatorParams, z: Tensor, n: int) -> CreationOutput:
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    if n > p.n_max:
        raise CapacityError(f"requested {n} points, creator caps at {p.n_max}")
    z2 = ad.reshape(z, (1, z.shape[0]))
    flat = mlp_forward(p.mlp, z2)
    full = ad.reshape(flat, (p.n_max, p.c))
    x = ad.narrow(full, 0, 0, n)
    return CreationOutput(x0=x, selected_indices=None)
