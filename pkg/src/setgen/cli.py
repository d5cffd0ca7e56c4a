"""Command-line entry points: dataset gen / train / generate / eval / verify."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import verify as verify_mod
from .autodiff import Rng
from .config import (default_config, format_config, load_config, split_config)
from .errors import SetgenError
from .metrics import (diversity_score, eval_reconstruction,
                      incorrect_valency_pct, valency_w2)
from .model import SizeModel, VaeModel, generate
from .synthdata import SetDataset, gen_dataset, load_dataset, save_dataset
from .train import load_checkpoint, train


def _resolve_seed(args, resolved: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("SETGEN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SetgenError(f"SETGEN_SEED is not an integer: {env!r}")
    return int(resolved.get("seed", 0))


def _load_resolved(args) -> dict:
    if getattr(args, "config", None):
        return load_config(args.config)
    return default_config()


def _sha256_file(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_run_meta(out_dir: str, resolved: dict, seed: int,
                    inputs: dict[str, str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.txt"), "w") as fh:
        fh.write(format_config(resolved))
    meta = {"seed": seed,
            "inputs": {name: _sha256_file(p) for name, p in inputs.items()}}
    with open(os.path.join(out_dir, "run_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_dataset_gen(args) -> int:
    resolved = _load_resolved(args)
    if args.count is not None:
        resolved["data.count"] = args.count
    seed = _resolve_seed(args, resolved)
    data_cfg, _, _, count, _ = split_config(resolved)
    if args.extrapolate:
        data_cfg = data_cfg.extrapolation()
    ds = gen_dataset(data_cfg, count, seed)
    save_dataset(ds, args.out)
    sizes = ds.sizes()
    print(f"wrote {len(ds)} sets to {args.out} "
          f"(sizes {sizes.min()}..{sizes.max()}, mean {sizes.mean():.2f})")
    return 0


def cmd_train(args) -> int:
    resolved = _load_resolved(args)
    seed = _resolve_seed(args, resolved)
    ds = load_dataset(args.data)
    _, model_cfg, train_cfg, _, _ = split_config(resolved)
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    size_model = SizeModel.empirical(ds.size_histogram())
    model = VaeModel.create(Rng(seed), model_cfg, size_model)
    _write_run_meta(args.out, resolved, seed, {"data": args.data})
    log = train(model, ds, train_cfg, seed=seed, out_dir=args.out)
    last = log.rows[-1]
    print(f"trained {len(log.rows)} steps; final total {last['total']:.4f} "
          f"(w2 {last['w2']:.4f}); checkpoint {args.out}/final.json")
    return 0


def cmd_generate(args) -> int:
    model, blob = load_checkpoint(args.checkpoint)
    if model.size_model is None:
        raise SetgenError("checkpoint has no size model; cannot sample sizes")
    resolved = default_config()
    seed = _resolve_seed(args, resolved)
    sets = generate(model, model.size_model, args.count, Rng(seed),
                    extrapolate=args.extrapolate)
    save_dataset(SetDataset(sets=sets), args.out)
    print(f"wrote {len(sets)} generated sets to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    cfg = ds.config
    d_nb = cfg.neighbor_distance if cfg else 1.1
    k_max = cfg.max_neighbors if cfg else 4
    resolved = default_config()
    seed = _resolve_seed(args, resolved)
    report = {"reconstruction_w2": eval_reconstruction(model, ds)}
    if args.generated:
        gen = load_dataset(args.generated, validate=False)
        report["valency_w2"] = valency_w2(gen.sets, ds, d_nb)
        report["incorrect_valency_pct"] = incorrect_valency_pct(
            gen.sets, k_max, d_nb)
        report["diversity"] = diversity_score(
            gen.sets, pairs=min(1000, len(gen.sets) * 4), rng=Rng(seed))
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def cmd_verify(args) -> int:
    resolved = default_config()
    seed = _resolve_seed(args, resolved)
    report = verify_mod.run_all(epochs=args.epochs, seed=seed)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        verify_mod.write_report(report, args.out)
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="setgen",
                                description="One-shot set generation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset operations")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    g = ds_sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--extrapolate", action="store_true",
                   help="shift the size law toward larger sets")
    g.set_defaults(func=cmd_dataset_gen)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    gn = sub.add_parser("generate", help="sample new sets from a checkpoint")
    gn.add_argument("--checkpoint", required=True)
    gn.add_argument("--count", type=int, required=True)
    gn.add_argument("--out", required=True)
    gn.add_argument("--seed", type=int)
    gn.add_argument("--extrapolate", action="store_true")
    gn.set_defaults(func=cmd_generate)

    ev = sub.add_parser("eval", help="evaluate a checkpoint against a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--generated", help="generated-sets file for sample metrics")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    vf = sub.add_parser("verify", help="run the equivariance check suite")
    vf.add_argument("--epochs", type=int, default=2)
    vf.add_argument("--seed", type=int)
    vf.add_argument("--out")
    vf.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SetgenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
