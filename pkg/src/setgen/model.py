"""Set VAE: permutation-invariant encoder, reparameterization, and a
creation + transformer decoder, plus both size-sampling models (empirical
histogram or a latent-conditioned size predictor)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .creation import (CreationOutput, FirstnParams, IidParams,
                       MlpCreatorParams, TopnParams, create_firstn,
                       create_iid, create_mlp, create_topn)
from .errors import CapacityError, ContractError, ShapeError
from .layers import (MlpParams, TransformerParams, Linear, mlp_forward,
                     pna_pool, transformer_block)

LOGVAR_CLIP = 10.0
CREATORS = ("mlp", "iid", "firstn", "topn")


@dataclass
class ModelConfig:
    point_dim: int = 3
    width: int = 64        # channel width c
    latent_dim: int = 32
    heads: int = 4
    angle_dim: int = 16
    iid_low_dim: int = 8
    creator: str = "topn"
    n_max: int = 35        # capacity for mlp/firstn creators
    n_ref: int = 70        # Top-n reference size; default 2x max training size


@dataclass
class EncoderParams:
    point_mlp: MlpParams          # d -> c (2 layers)
    blocks: list[TransformerParams]
    head_mlp: MlpParams           # 4c -> 2l (2 layers)

    @staticmethod
    def create(rng: Rng, cfg: ModelConfig) -> "EncoderParams":
        c = cfg.width
        return EncoderParams(
            point_mlp=MlpParams.create(rng, [cfg.point_dim, c, c]),
            blocks=[TransformerParams.create(rng, c, cfg.heads) for _ in range(3)],
            head_mlp=MlpParams.create(rng, [4 * c, 2 * c, 2 * cfg.latent_dim]),
        )

    def params(self, prefix: str = "enc."):
        out = self.point_mlp.params(prefix + "pt.")
        for i, b in enumerate(self.blocks):
            out += b.params(f"{prefix}tb{i}.")
        out += self.head_mlp.params(prefix + "head.")
        return out


@dataclass
class DecoderParams:
    creator_tag: str
    creator: object                # one of the creation param structs
    linear: Linear                 # c -> c
    blocks: list[TransformerParams]
    head_mlp: MlpParams            # c -> d (2 layers)

    @staticmethod
    def create(rng: Rng, cfg: ModelConfig) -> "DecoderParams":
        c, l = cfg.width, cfg.latent_dim
        if cfg.creator == "topn":
            creator = TopnParams.create(rng, l, c, cfg.angle_dim, cfg.n_ref)
        elif cfg.creator == "firstn":
            creator = FirstnParams.create(rng, l, c, cfg.n_max)
        elif cfg.creator == "iid":
            creator = IidParams.create(rng, l, c, cfg.iid_low_dim)
        elif cfg.creator == "mlp":
            creator = MlpCreatorParams.create(rng, l, c, cfg.n_max)
        else:
            raise ContractError(f"unknown creator {cfg.creator!r}")
        return DecoderParams(
            creator_tag=cfg.creator,
            creator=creator,
            linear=Linear.create(rng, c, c),
            blocks=[TransformerParams.create(rng, c, cfg.heads) for _ in range(3)],
            head_mlp=MlpParams.create(rng, [c, c, cfg.point_dim]),
        )

    def params(self, prefix: str = "dec."):
        out = self.creator.params(prefix + "create.")
        out += self.linear.params(prefix + "lin.")
        for i, b in enumerate(self.blocks):
            out += b.params(f"{prefix}tb{i}.")
        out += self.head_mlp.params(prefix + "head.")
        return out


def encode(p: EncoderParams, x: Tensor) -> tuple[Tensor, Tensor]:
    """Permutation-invariant encoding to (mu, logvar).

    Accepts one set (n x d) or a batch of same-size sets (b x n x d).
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim not in (2, 3):
        raise ShapeError(f"encode expects rank 2 or 3, got {x.ndim}")
    h = mlp_forward(p.point_mlp, x)
    for block in p.blocks:
        h = transformer_block(block, h)
    pooled = pna_pool(h)                     # (4c,) or (b, 4c)
    if pooled.ndim == 1:
        pooled = ad.reshape(pooled, (1, pooled.shape[0]))
    out = mlp_forward(p.head_mlp, pooled)    # (b, 2l)
    latent = out.shape[-1] // 2
    mu = ad.narrow(out, -1, 0, latent)
    logvar = ad.clamp(ad.narrow(out, -1, latent, latent),
                      -LOGVAR_CLIP, LOGVAR_CLIP)
    if x.ndim == 2:
        mu = ad.reshape(mu, (latent,))
        logvar = ad.reshape(logvar, (latent,))
    return mu, logvar


def reparameterize(mu: Tensor, logvar: Tensor, rng: Rng) -> Tensor:
    if mu.shape != logvar.shape:
        raise ShapeError("mu and logvar must have the same shape")
    eps = rng.normal(mu.shape)
    return ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), eps))


def create_initial(dec: DecoderParams, z: Tensor, n: int,
                   rng: Rng | None = None) -> CreationOutput:
    if dec.creator_tag == "topn":
        return create_topn(dec.creator, z, n)
    if dec.creator_tag == "firstn":
        return create_firstn(dec.creator, z, n)
    if dec.creator_tag == "mlp":
        return create_mlp(dec.creator, z, n)
    if rng is None:
        raise ContractError("iid creation needs an rng")
    return create_iid(dec.creator, z, n, rng)


def decode(p: DecoderParams, z: Tensor, n: int,
           rng: Rng | None = None) -> Tensor:
    """creation -> linear -> 3 transformer blocks -> head MLP.

    z may be rank-1 (single set) or rank-2 (batch; one set per row, all of
    size n).
    """
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    if z.ndim == 1:
        h = create_initial(p, z, n, rng).x0
    else:
        rows = []
        for b in range(z.shape[0]):
            zb = ad.reshape(ad.narrow(z, 0, b, 1), (z.shape[1],))
            rows.append(create_initial(p, zb, n, rng).x0)
        h = ad.stack_rows(rows)
    h = p.linear(h)
    for block in p.blocks:
        h = transformer_block(block, h)
    return mlp_forward(p.head_mlp, h)


@dataclass
class SizeModel:
    """Empirical histogram p(n), or a latent-conditioned size predictor."""

    mode: str = "empirical"                   # empirical | learned
    histogram: dict[int, float] | None = None
    size_mlp: MlpParams | None = None         # l -> n_cap logits
    n_cap: int = 45

    @staticmethod
    def empirical(histogram: dict[int, float]) -> "SizeModel":
        total = sum(histogram.values())
        return SizeModel(mode="empirical",
                         histogram={n: p / total for n, p in histogram.items()})

    @staticmethod
    def learned(rng: Rng, latent_dim: int, n_cap: int) -> "SizeModel":
        return SizeModel(mode="learned", n_cap=n_cap,
                         size_mlp=MlpParams.create(rng, [latent_dim, 64, n_cap]))

    def params(self, prefix: str = "size."):
        return self.size_mlp.params(prefix) if self.size_mlp else []


def sample_size_empirical(size: SizeModel, rng: Rng,
                          extrapolate: bool = False) -> int:
    if size.mode != "empirical":
        raise ContractError("size model is not empirical")
    ns = np.array(sorted(size.histogram))
    ps = np.array([size.histogram[int(n)] for n in ns])
    ps = ps / ps.sum()
    u = rng.uniform(0.0, 1.0)
    n = int(ns[np.searchsorted(np.cumsum(ps), u, side="right").clip(0, len(ns) - 1)])
    if extrapolate:
        n = min(n + 10, size.n_cap)
    return n


def size_aux_loss(size: SizeModel, z: Tensor, true_n: int) -> Tensor:
    """Cross-entropy between predicted size logits and the true size.
    Classes are 1..n_cap; the true size drives decoding during training."""
    if size.mode != "learned":
        raise ContractError("size model is not learned")
    z2 = ad.reshape(z, (1, z.shape[0])) if z.ndim == 1 else z
    logits = mlp_forward(size.size_mlp, z2)
    logp = ad.log(ad.softmax_lastdim(logits))
    idx = true_n - 1
    picked = ad.narrow(logp, -1, idx, 1)
    return ad.neg(ad.mean(picked))


def predict_size_learned(size: SizeModel, z: Tensor) -> int:
    if size.mode != "learned":
        raise ContractError("size model is not learned")
    z2 = ad.reshape(z, (1, z.shape[0]))
    logits = mlp_forward(size.size_mlp, z2)
    return int(np.argmax(logits.data[0])) + 1


@dataclass
class VaeModel:
    config: ModelConfig
    encoder: EncoderParams
    decoder: DecoderParams
    size_model: SizeModel | None = None

    @staticmethod
    def create(rng: Rng, cfg: ModelConfig,
               size_model: SizeModel | None = None) -> "VaeModel":
        return VaeModel(config=cfg,
                        encoder=EncoderParams.create(rng.spawn(1), cfg),
                        decoder=DecoderParams.create(rng.spawn(2), cfg),
                        size_model=size_model)

    def params(self):
        out = self.encoder.params() + self.decoder.params()
        if self.size_model is not None and self.size_model.mode == "learned":
            out += self.size_model.params()
        return out

    def reconstruct(self, x: np.ndarray, rng: Rng | None = None) -> np.ndarray:
        """Deterministic eval-time reconstruction (z = posterior mean)."""
        mu, _ = encode(self.encoder, Tensor(x))
        return decode(self.decoder, mu, len(x), rng).data


def generate(model: VaeModel, size_model: SizeModel, count: int, rng: Rng,
             extrapolate: bool = False,
             max_retries: int = 100) -> list[np.ndarray]:
    """Sample z from the prior, a size from the size model, and decode.
    Sets are emitted one by one; capacity overruns are resampled."""
    out: list[np.ndarray] = []
    latent = model.config.latent_dim
    for _ in range(count):
        for attempt in range(max_retries + 1):
            z = Tensor(rng.normal(latent))
            if size_model.mode == "empirical":
                n = sample_size_empirical(size_model, rng, extrapolate)
            else:
                n = predict_size_learned(size_model, z)
            try:
                out.append(decode(model.decoder, z, n, rng).data.copy())
                break
            except CapacityError:
                if attempt == max_retries:
                    raise
    return out
