"""Deterministic training loop: same-size mini-batching, Adam, plateau
scheduling, CSV logging, and JSON checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import CheckpointError, ContractError, NumericsError
from .layers import AdamState, PlateauScheduler, adam_step
from .losses import kl_diag_gauss, reg_min_dist, reg_valency, w2_equal
from .model import (ModelConfig, SizeModel, VaeModel, decode, encode,
                    reparameterize, size_aux_loss)
from .synthdata import SetDataset


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 2e-4
    patience: int = 25
    lr_factor: float = 0.5
    lambda_kl: float = 1e-3
    lambda_dist: float = 0.1
    lambda_valency: float = 0.1
    lambda_size: float = 0.0   # weight of the learned-size auxiliary loss
    d0: float = 1.0
    d_nb: float = 1.1
    k_max: int = 4
    tau: float = 0.11
    recon_loss: str = "w2"     # w2 | chamfer | first_row (negative control)


def make_batches(dataset: SetDataset, batch_size: int,
                 rng: Rng) -> list[list[int]]:
    """Indices grouped so every batch holds sets of one size; group order
    and within-group order are shuffled per call."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(dataset.sets):
        groups.setdefault(len(s), []).append(i)
    batches: list[list[int]] = []
    for size in sorted(groups):
        idxs = groups[size]
        order = rng.permutation(len(idxs))
        shuffled = [idxs[k] for k in order]
        for start in range(0, len(shuffled), batch_size):
            batches.append(shuffled[start:start + batch_size])
    order = rng.permutation(len(batches))
    return [batches[k] for k in order]


def _recon_loss(cfg: TrainConfig, xb: Tensor, yb: Tensor) -> Tensor:
    """Mean per-sample reconstruction loss over a same-size batch."""
    from .losses import chamfer

    b, n, d = xb.shape
    total = None
    for i in range(b):
        x = xb.data[i]
        y = ad.reshape(ad.narrow(yb, 0, i, 1), (n, d))
        if cfg.recon_loss == "w2":
            li = w2_equal(x, y)
        elif cfg.recon_loss == "chamfer":
            li = chamfer(x, y)
        elif cfg.recon_loss == "first_row":
            # deliberately order-dependent: used as a negative control
            li = ad.sum(ad.square(ad.add(ad.narrow(y, 0, 0, 1), -x[0])))
        else:
            raise ContractError(f"unknown recon_loss {cfg.recon_loss!r}")
        total = li if total is None else ad.add(total, li)
    return ad.mul(total, 1.0 / b)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path: str) -> None:
        fields = ["step", "total", "w2", "kl", "reg2", "reg3", "aux_n", "lr"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows)


def train(model: VaeModel, dataset: SetDataset, cfg: TrainConfig,
          seed: int, out_dir: str | None = None,
          step_callback=None) -> TrainLog:
    """Run the full loop; reproducible from (model init, dataset, seed)."""
    params = [t for _, t in model.params()]
    opt = AdamState(lr=cfg.lr)
    sched = PlateauScheduler(cfg.lr, cfg.patience, cfg.lr_factor)
    root = Rng(seed)
    batch_rng = root.spawn(1)
    noise_rng = root.spawn(2)
    log = TrainLog()
    step = 0

    for epoch in range(cfg.epochs):
        epoch_recon = 0.0
        epoch_batches = 0
        for batch in make_batches(dataset, cfg.batch_size, batch_rng):
            xb = Tensor(np.stack([dataset.sets[i] for i in batch]))
            b, n, _ = xb.shape
            mu, logvar = encode(model.encoder, xb)
            z = reparameterize(mu, logvar, noise_rng)
            yb = decode(model.decoder, z, n, noise_rng)

            recon = _recon_loss(cfg, xb, yb)
            kl = ad.mul(kl_diag_gauss(mu, logvar), 1.0 / b)
            reg2 = ad.mul(reg_min_dist(yb, cfg.d0), 1.0 / b)
            reg3 = ad.mul(reg_valency(yb, cfg.d_nb, cfg.k_max, cfg.tau), 1.0 / b)
            comps = {
                "w2": recon,
                "kl": ad.mul(kl, cfg.lambda_kl),
                "reg2": ad.mul(reg2, cfg.lambda_dist),
                "reg3": ad.mul(reg3, cfg.lambda_valency),
            }
            if cfg.lambda_size and model.size_model is not None \
                    and model.size_model.mode == "learned":
                aux = size_aux_loss(model.size_model, z, n)
                comps["aux_n"] = ad.mul(aux, cfg.lambda_size)
            else:
                comps["aux_n"] = Tensor(0.0)
            total = None
            for c in comps.values():
                total = c if total is None else ad.add(total, c)

            if not np.isfinite(total.data):
                raise NumericsError(f"non-finite loss at step {step}")

            ad.zero_grads(params)
            ad.backward(total)
            opt.lr = sched.lr
            adam_step(opt, params)
            if model.decoder.creator_tag == "topn":
                model.decoder.creator.ref.project_angles()

            row = {"step": step,
                   "total": float(total.data),
                   "w2": float(comps["w2"].data),
                   "kl": float(comps["kl"].data),
                   "reg2": float(comps["reg2"].data),
                   "reg3": float(comps["reg3"].data),
                   "aux_n": float(comps["aux_n"].data),
                   "lr": sched.lr}
            log.rows.append(row)
            if step_callback is not None:
                step_callback(row, model)
            epoch_recon += float(recon.data)
            epoch_batches += 1
            step += 1
        sched.step(epoch_recon / max(1, epoch_batches))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log.to_csv(os.path.join(out_dir, "train_log.csv"))
        save_checkpoint(model, opt, root, cfg,
                        os.path.join(out_dir, "final.json"))
    return log


# -- checkpointing --------------------------------------------------------


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()).hexdigest()


def save_checkpoint(model: VaeModel, opt: AdamState | None, rng: Rng | None,
                    train_cfg: TrainConfig | None, path: str) -> None:
    config = {"model": asdict(model.config)}
    if train_cfg is not None:
        config["train"] = asdict(train_cfg)
    named = model.params()
    blob = {
        "format": 1,
        "config": config,
        "config_hash": config_hash(config),
        "params": {name: {"shape": list(t.shape),
                          "data": t.data.reshape(-1).tolist()}
                   for name, t in named},
    }
    if model.size_model is not None and model.size_model.mode == "empirical":
        blob["size_histogram"] = {str(k): v for k, v
                                  in model.size_model.histogram.items()}
    if opt is not None:
        blob["adam"] = {
            "t": opt.t, "lr": opt.lr,
            "m": {named[i][0]: opt.m[i].reshape(-1).tolist() for i in opt.m},
            "v": {named[i][0]: opt.v[i].reshape(-1).tolist() for i in opt.v},
        }
    if rng is not None:
        state = rng.state()
        blob["rng_state"] = json.loads(json.dumps(state, default=str))
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[VaeModel, dict]:
    with open(path) as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"unreadable checkpoint: {exc}") from None
    if config_hash(blob["config"]) != blob.get("config_hash"):
        raise CheckpointError("config hash mismatch")
    mcfg = ModelConfig(**blob["config"]["model"])
    size_model = None
    if "size_histogram" in blob:
        size_model = SizeModel.empirical(
            {int(k): v for k, v in blob["size_histogram"].items()})
    model = VaeModel.create(Rng(0), mcfg, size_model)
    named = dict(model.params())
    for name, rec in blob["params"].items():
        if name not in named:
            raise CheckpointError(f"unknown parameter {name!r}")
        arr = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        if arr.shape != named[name].shape:
            raise CheckpointError(f"shape mismatch for {name!r}")
        named[name].data = arr
    return model, blob
