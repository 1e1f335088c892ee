"""Command-line surface for the pipeline.

Subcommands: synth-gen, train, eval-calibration, uncertainty, active-select,
model-select, loglik-scan. Options come from plain key=value config files
("#" comments) overridden by command-line flags; every run echoes its fully
resolved configuration to stderr exactly once. Exit codes: 0 success, 2 for
input or validation problems, 3 for numerical failures during optimization.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import adapter as adapter_mod
from . import data_io, retrieval, training, uncertainty
from .uncertainty import DEFAULT_M_PASSES
from .applications import ModelCandidate, active_select, model_select
from .errors import InputError, NumericalError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

SYNTH_KEYS = {
    "n_concepts": int, "d": int, "images_per_concept": int,
    "captions_per_concept": int, "noise_low": float, "noise_high": float,
    "cross_offset": float, "seed": int,
}
TRAIN_KEYS = {
    "epochs": int, "learning_rate": float, "batch_size": int,
    "lambda_cross": float, "use_stable_nll": lambda s: s.lower() in ("1", "true", "yes", "on"),
    "seed": int, "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "d_hidden": int, "dropout_p": float,
}
EVAL_KEYS = {"n_levels": int, "m_passes": int, "seed": int, "direction": str}

DATA_FILES = {
    "images": "images.pvlmemb",
    "captions": "captions.pvlmemb",
    "correspondences": "correspondences.tsv",
    "noise": "noise.csv",
}


class CliError(Exception):
    """Fatal CLI problem with an explicit exit code."""

    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def load_config_file(path: str, allowed: dict) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot read config {path}: {err}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key not in allowed:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = allowed[key](value.strip())
        except ValueError:
            raise CliError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return values


def resolve_config(args, allowed: dict, flag_map: dict) -> dict:
    """File values first, then flags; flags win."""
    resolved = {}
    if getattr(args, "config", None):
        resolved.update(load_config_file(args.config, allowed))
    for key, attr in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            resolved[key] = value
    return resolved


def echo_config(command: str, resolved: dict) -> None:
    pairs = " ".join(f"{k}={resolved[k]}" for k in sorted(resolved))
    print(f"config[{command}]: {pairs}", file=sys.stderr)


def _write(path: Path, data) -> None:
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data, encoding="utf-8")


def load_dataset(data_dir: str):
    base = Path(data_dir)
    try:
        images = data_io.read_embeddings((base / DATA_FILES["images"]).read_bytes())
        captions = data_io.read_embeddings((base / DATA_FILES["captions"]).read_bytes())
        cmap = data_io.read_correspondences(
            (base / DATA_FILES["correspondences"]).read_text(encoding="utf-8"),
            images, captions)
    except OSError as err:
        raise CliError(f"cannot read dataset from {data_dir}: {err}") from None
    return images, captions, cmap


def load_adapter_file(path: str | None) -> adapter_mod.AdapterNetwork:
    if path is None:
        raise CliError("no adapter file given for the requested modality")
    try:
        return adapter_mod.deserialize(Path(path).read_bytes())
    except OSError as err:
        raise CliError(f"cannot read adapter {path}: {err}") from None


def cmd_synth_gen(args) -> int:
    resolved = resolve_config(args, SYNTH_KEYS, {
        "n_concepts": "n_concepts", "d": "d",
        "images_per_concept": "images_per_concept",
        "captions_per_concept": "captions_per_concept",
        "noise_low": "noise_low", "noise_high": "noise_high",
        "cross_offset": "cross_offset", "seed": "seed",
    })
    cfg = data_io.SynthConfig(**resolved)
    echo_config("synth-gen", vars(cfg))
    images, captions, cmap, noise = data_io.synth_generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / DATA_FILES["images"], data_io.write_embeddings(images))
    _write(out / DATA_FILES["captions"], data_io.write_embeddings(captions))
    _write(out / DATA_FILES["correspondences"], data_io.write_correspondences(cmap))
    _write(out / DATA_FILES["noise"], data_io.write_noise_table(noise))
    print(f"wrote {images.n} images, {captions.n} captions, "
          f"{len(cmap.edges)} correspondences to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    resolved = resolve_config(args, TRAIN_KEYS, {
        "epochs": "epochs", "learning_rate": "lr", "batch_size": "batch_size",
        "lambda_cross": "lambda_cross", "seed": "seed", "d_hidden": "d_hidden",
        "dropout_p": "dropout_p", "use_stable_nll": "use_stable_nll",
    })
    cfg = training.TrainConfig(**resolved).validate()
    echo_config("train", vars(cfg))
    images, captions, cmap = load_dataset(args.data_dir)
    pairs = data_io.expand_pairs(images, captions, cmap)
    adapter_v, adapter_t, history = training.train(pairs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "adapter_v.pvlmadpt", adapter_mod.serialize(adapter_v))
    _write(out / "adapter_t.pvlmadpt", adapter_mod.serialize(adapter_t))
    _write(out / "history.csv", history.to_csv())
    print(f"final losses: rec_v={history.loss_rec_v[-1]:.6g} "
          f"rec_t={history.loss_rec_t[-1]:.6g} cross={history.loss_cross[-1]:.6g} "
          f"total={history.loss_total[-1]:.6g}")
    return EXIT_OK


def _eval_args(args) -> dict:
    return resolve_config(args, EVAL_KEYS, {
        "n_levels": "n_levels", "m_passes": "m_passes", "seed": "seed",
        "direction": "direction",
    })


def cmd_eval_calibration(args) -> int:
    resolved = {"n_levels": 10, "m_passes": DEFAULT_M_PASSES, "seed": 0, "direction": "i2t"}
    resolved.update(_eval_args(args))
    echo_config("eval-calibration", resolved)
    images, captions, cmap = load_dataset(args.data_dir)
    task = retrieval.task_from_stores(images, captions, cmap, resolved["direction"])
    net = load_adapter_file(
        args.adapter_v if resolved["direction"] == "i2t" else args.adapter_t)
    report = retrieval.evaluate_calibration(
        net, task, n_levels=resolved["n_levels"],
        m_passes=resolved["m_passes"], seed=resolved["seed"])
    text = report.to_json()
    if args.out:
        _write(Path(args.out), text + "\n")
    print(text)
    return EXIT_OK


def cmd_uncertainty(args) -> int:
    resolved = {"m_passes": DEFAULT_M_PASSES, "seed": 0}
    resolved.update(resolve_config(args, {"m_passes": int, "seed": int}, {
        "m_passes": "m_passes", "seed": "seed"}))
    resolved["modality"] = args.modality
    echo_config("uncertainty", resolved)
    images, captions, _ = load_dataset(args.data_dir)
    store = images if args.modality == "image" else captions
    net = load_adapter_file(args.adapter_v if args.modality == "image" else args.adapter_t)
    if net.d_in != store.d:
        raise CliError(f"adapter width {net.d_in} does not match store width {store.d}")
    batch = uncertainty.batch_uncertainty(net, store.matrix, resolved["m_passes"],
                                          resolved["seed"])
    text = uncertainty.uncertainty_csv(store.ids, batch)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_active_select(args) -> int:
    resolved = {"m_passes": DEFAULT_M_PASSES, "seed": 0}
    resolved.update(resolve_config(args, {"m_passes": int, "seed": int, "budget": int}, {
        "m_passes": "m_passes", "seed": "seed", "budget": "budget"}))
    if "budget" not in resolved:
        raise CliError("--budget is required")
    echo_config("active-select", resolved)
    images, _, _ = load_dataset(args.data_dir)
    net = load_adapter_file(args.adapter_v)
    selected = active_select(net, images, resolved["budget"],
                             m_passes=resolved["m_passes"], seed=resolved["seed"])
    text = "".join(f"{sample_id}\n" for sample_id in selected)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_model_select(args) -> int:
    resolved = {"m_passes": DEFAULT_M_PASSES, "seed": 0}
    resolved.update(resolve_config(args, {"m_passes": int, "seed": int}, {
        "m_passes": "m_passes", "seed": "seed"}))
    echo_config("model-select", resolved)
    try:
        images = data_io.read_embeddings(Path(args.images).read_bytes())
    except OSError as err:
        raise CliError(f"cannot read images {args.images}: {err}") from None
    candidates = []
    for cand_arg in args.candidate:
        name, sep, paths = cand_arg.partition("=")
        if not sep or not name:
            raise CliError(f"--candidate must be NAME=ADAPTER_V[,ADAPTER_T], got {cand_arg!r}")
        v_path, _, t_path = paths.partition(",")
        candidates.append(ModelCandidate(
            name=name,
            adapter_v=load_adapter_file(v_path),
            adapter_t=load_adapter_file(t_path) if t_path else None,
        ))
    result = model_select(candidates, images, m_passes=resolved["m_passes"],
                          seed=resolved["seed"])
    text = result.to_json()
    if args.out:
        _write(Path(args.out), text + "\n")
    print(text)
    return EXIT_OK


def cmd_loglik_scan(args) -> int:
    resolved = {"modality": args.modality, "source_id": args.source_id}
    echo_config("loglik-scan", resolved)
    images, captions, _ = load_dataset(args.data_dir)
    store = images if args.modality == "image" else captions
    net = load_adapter_file(args.adapter_v if args.modality == "image" else args.adapter_t)
    if args.source_id not in store.ids:
        raise CliError(f"unknown source ID {args.source_id!r}")
    if net.d_in != store.d:
        raise CliError(f"adapter width {net.d_in} does not match store width {store.d}")
    from .ggd import GgdParams, ggd_logpdf
    source = store.row(args.source_id)
    out = adapter_mod.forward(net, source, dropout_on=False)
    params = GgdParams(out.mu, out.alpha, out.beta)
    lines = ["id,loglik"]
    for i, sample_id in enumerate(store.ids):
        lines.append(f"{sample_id},{ggd_logpdf(store.matrix[i], params):.17g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probemb",
        description="Probabilistic adapters for frozen vision-language embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("synth-gen", help="generate a synthetic paired dataset")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-concepts", dest="n_concepts", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--images-per-concept", dest="images_per_concept", type=int)
    p.add_argument("--captions-per-concept", dest="captions_per_concept", type=int)
    p.add_argument("--noise-low", dest="noise_low", type=float)
    p.add_argument("--noise-high", dest="noise_high", type=float)
    p.add_argument("--cross-offset", dest="cross_offset", type=float)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="train both adapters on a dataset directory")
    add_common(p)
    p.add_argument("data_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lambda-cross", dest="lambda_cross", type=float)
    p.add_argument("--d-hidden", dest="d_hidden", type=int)
    p.add_argument("--dropout-p", dest="dropout_p", type=float)
    p.add_argument("--use-stable-nll", dest="use_stable_nll", type=lambda s: s.lower() in ("1", "true", "yes", "on"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-calibration", help="uncertainty-level calibration report")
    add_common(p)
    p.add_argument("data_dir")
    p.add_argument("--adapter-v", dest="adapter_v", required=True)
    p.add_argument("--adapter-t", dest="adapter_t")
    p.add_argument("--direction", choices=("i2t", "t2i"))
    p.add_argument("--n-levels", dest="n_levels", type=int)
    p.add_argument("--m-passes", dest="m_passes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_calibration)

    p = sub.add_parser("uncertainty", help="per-sample uncertainty CSV")
    add_common(p)
    p.add_argument("data_dir")
    p.add_argument("--adapter-v", dest="adapter_v")
    p.add_argument("--adapter-t", dest="adapter_t")
    p.add_argument("--modality", choices=("image", "text"), default="image")
    p.add_argument("--m-passes", dest="m_passes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("active-select", help="IDs of the most uncertain images")
    add_common(p)
    p.add_argument("data_dir")
    p.add_argument("--adapter-v", dest="adapter_v", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--m-passes", dest="m_passes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_active_select)

    p = sub.add_parser("model-select", help="rank candidate adapters by mean uncertainty")
    add_common(p)
    p.add_argument("--images", required=True, help="embedding file of target images")
    p.add_argument("--candidate", action="append", required=True,
                   metavar="NAME=ADAPTER_V[,ADAPTER_T]")
    p.add_argument("--m-passes", dest="m_passes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_model_select)

    p = sub.add_parser("loglik-scan",
                       help="log-likelihood of every sample under one sample's distribution")
    add_common(p)
    p.add_argument("data_dir")
    p.add_argument("--adapter-v", dest="adapter_v")
    p.add_argument("--adapter-t", dest="adapter_t")
    p.add_argument("--modality", choices=("image", "text"), default="image")
    p.add_argument("--source-id", dest="source_id", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loglik_scan)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except NumericalError as err:
        print(f"numerical failure: {err} {err.context}", file=sys.stderr)
        return EXIT_NUMERIC
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
