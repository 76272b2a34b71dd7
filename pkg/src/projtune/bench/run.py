"""End-to-end experiment orchestration: pretrain, fine-tune, evaluate.

The protocol: pretrain the model on the full clean training distribution
(plain SGD) and freeze that snapshot as the anchor; fine-tune on a small,
label-skewed subsample of the same clean data so that unconstrained methods
have room to drift; evaluate top-1 accuracy on the clean test split (ID) and
on every (shift kind, severity) corruption split (OOD). Every batch is drawn
from a counter-based stream keyed by (seed, iteration), so a resumed run and
a reproduction are bit-identical to the original.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from ..baselines import (
    BaseOnlyOptimizer,
    MarsSpOptimizer,
    TpgmOptimizer,
    freeze_mask,
    l2_sp_grad,
    make_base_optimizer,
    wise_interpolate_params,
)
from ..errors import DomainError, RunError
from ..ftp import FtpOptimizer, GammaState, make_managed
from ..hyperlr import HyperSgd
from ..model import Batch, MlpSpec, backward, forward, init_params
from ..numerics import SeededRng, mars_norm
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, spec_hash
from .config import ExperimentConfig
from .data import (
    N_SEVERITIES,
    SHIFT_KINDS,
    ShiftDataset,
    Split,
    finetune_subsample,
    generate_shift_dataset,
)
from .record import RunRecord, emit_metrics, write_summary

__all__ = [
    "CountingModel",
    "accuracy",
    "evaluate",
    "model_spec_from_config",
    "pretrain",
    "run_experiment",
]

# Stream tags: one namespace per random purpose, never shared.
_TAG_MODEL_INIT = 100
_TAG_BATCH = 101
_TAG_VAL = 102
_TAG_PRETRAIN_BATCH = 103

# TPGM holds out this fraction of the fine-tuning subsample as validation data.
TPGM_VAL_FRACTION = 0.25


def model_spec_from_config(config: ExperimentConfig) -> MlpSpec:
    widths = (config.dataset_n_features, *config.model_hidden, config.dataset_n_classes)
    n_hidden = len(config.model_hidden)
    return MlpSpec(
        widths=widths,
        activations=(config.model_activation,) * n_hidden,
        loss="softmax_ce",
    )


class CountingModel:
    """Loss/gradient evaluator that counts forward and backward passes."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.fwd_count = 0
        self.bwd_count = 0

    def loss_and_grads(self, values: dict[str, np.ndarray], batch: Batch):
        self.fwd_count += 1
        self.bwd_count += 1
        return backward(self.spec, values, batch)


def draw_batch(rng: SeededRng, split: Split, batch_size: int) -> Batch:
    n = len(split)
    take = min(batch_size, n)
    idx = rng.choice(n, take, replace=False)
    return Batch(split.inputs[idx], split.labels[idx])


def accuracy(spec: MlpSpec, params: dict[str, np.ndarray], split: Split) -> float:
    logits = forward(spec, params, split.inputs)
    return float((logits.argmax(axis=1) == split.labels).mean())


def evaluate(spec: MlpSpec, params: dict[str, np.ndarray], dataset: ShiftDataset) -> dict:
    """Top-1 accuracy on the clean split and every corruption split.

    ``ood_average`` is the mean over shift kinds of the per-kind mean over
    severities.
    """
    if spec.widths[-1] != dataset.spec.n_classes:
        raise DomainError(
            f"model output width {spec.widths[-1]} != class count {dataset.spec.n_classes}"
        )
    table = {"id": accuracy(spec, params, dataset.test)}
    kind_means = []
    for kind in SHIFT_KINDS:
        accs = []
        for severity in range(1, N_SEVERITIES + 1):
            acc = accuracy(spec, params, dataset.ood_split(kind, severity))
            table[f"ood.{kind}.{severity}"] = acc
            accs.append(acc)
        kind_means.append(sum(accs) / len(accs))
    table["ood_average"] = sum(kind_means) / len(kind_means)
    return table


def head_names(spec: MlpSpec) -> list[str]:
    last = spec.n_layers - 1
    return [f"layer{last}.weight", f"layer{last}.bias"]


# ---------------------------------------------------------------------------
# pretraining


def pretrain(
    config: ExperimentConfig,
    dataset: Optional[ShiftDataset] = None,
    path: Optional[Path] = None,
) -> Checkpoint:
    """Train on the full clean distribution with plain SGD; snapshot as anchor."""
    if dataset is None:
        dataset = generate_shift_dataset(config.dataset_spec(), config.seed)
    spec = model_spec_from_config(config)
    root = SeededRng(config.seed)
    values = init_params(spec, root.derive(_TAG_MODEL_INIT))
    opt = make_base_optimizer("sgd", config.pretrain_lr)
    iters = config.pretrain_epochs * config.iters_per_epoch(len(dataset.train))
    for t in range(1, iters + 1):
        batch = draw_batch(root.derive(_TAG_PRETRAIN_BATCH, t), dataset.train, config.batch_size)
        loss, grads = backward(spec, values, batch)
        if not math.isfinite(loss):
            raise RunError(f"pretraining diverged at iteration {t}")
        for name in values:
            values[name] = opt.step(name, values[name], grads[name])
    ckpt = Checkpoint(
        model_spec=spec,
        iteration=0,
        values=values,
        anchors={name: v.copy() for name, v in values.items()},
        rng={"seed": config.seed},
        extra={"phase": "pretrain", "pretrain_iters": iters},
    )
    if path is not None:
        save_checkpoint(ckpt, path)
    return ckpt


# ---------------------------------------------------------------------------
# fine-tuning


def _expand_exclude(exclude: tuple[str, ...], names) -> tuple[str, ...]:
    if exclude == ("*",):
        return tuple(names)
    return exclude


def _build_optimizer(config: ExperimentConfig, params, counting: CountingModel):
    base = make_base_optimizer(
        config.base,
        config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        nesterov=config.nesterov,
    )
    exclude = _expand_exclude(config.exclude_set, params.keys())
    method = config.method
    if method in ("ft", "linear-probe", "lp-ft", "l2-sp"):
        return BaseOnlyOptimizer(params, base)
    if method == "mars-sp":
        return MarsSpOptimizer(params, base, config.mars_sp_gamma, exclude_set=exclude)
    if method == "tpgm":
        return TpgmOptimizer(
            params,
            base,
            counting.loss_and_grads,
            inner_iters=config.tpgm_inner_iters,
            exclude_set=exclude,
        )
    if method == "ftp":
        return FtpOptimizer(params, base, k=config.k, exclude_set=exclude)
    if method == "hyper-sgd":
        return HyperSgd(params, alpha0=config.hyper_alpha0, kappa=config.hyper_kappa)
    raise RunError(f"no optimizer wired for method {method!r}")


def _gamma_values(optimizer) -> dict[str, float]:
    getter = getattr(optimizer, "gamma_values", None)
    return getter() if getter is not None else {}


def _constraint_excess(optimizer, params) -> Optional[float]:
    """Worst (distance - radius) over projected tensors; None if nothing projects."""
    views = getattr(optimizer, "views", None)
    if not views:
        return None
    gammas = _gamma_values(optimizer)
    worst = -math.inf
    for name, view in views.items():
        d = mars_norm(view.to_2d(params[name].value) - view.to_2d(params[name].anchor))
        worst = max(worst, d - gammas[name])
    return worst


def _optimizer_state(optimizer) -> tuple[dict, dict[str, np.ndarray]]:
    """(meta, tensors) for checkpointing, covering base and wrapper state."""
    base = getattr(optimizer, "base", None)
    meta: dict = {}
    tensors: dict[str, np.ndarray] = {}
    if base is not None:
        state = base.get_state()
        if "velocity" in state:
            meta["kind"] = "sgd"
            tensors.update({f"velocity/{k}": v for k, v in state["velocity"].items()})
        else:
            meta["kind"] = "adamw"
            meta["t_counts"] = state["t"]
            tensors.update({f"m/{k}": v for k, v in state["m"].items()})
            tensors.update({f"v/{k}": v for k, v in state["v"].items()})
    if isinstance(optimizer, HyperSgd):
        meta["kind"] = "hyper-sgd"
        meta["alpha"] = optimizer.state.alpha
        if optimizer.state.prev_grad is not None:
            tensors["hyper/prev_grad"] = optimizer.state.prev_grad
    return meta, tensors


def _restore_optimizer_state(optimizer, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    def group(prefix):
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in tensors.items() if k.startswith(prefix + "/")}

    base = getattr(optimizer, "base", None)
    if base is not None and meta.get("kind") == "sgd":
        base.set_state({"velocity": group("velocity")})
    elif base is not None and meta.get("kind") == "adamw":
        base.set_state({"m": group("m"), "v": group("v"), "t": meta.get("t_counts", {})})
    if isinstance(optimizer, HyperSgd):
        optimizer.state.alpha = float(meta["alpha"])
        prev = tensors.get("hyper/prev_grad")
        optimizer.state.prev_grad = None if prev is None else np.asarray(prev)


def _run_checkpoint(
    config: ExperimentConfig, spec: MlpSpec, params, optimizer, iteration: int,
    counting: CountingModel,
) -> Checkpoint:
    meta, tensors = _optimizer_state(optimizer)
    gammas = {
        name: asdict(gs) for name, gs in getattr(optimizer, "gammas", {}).items()
    }
    return Checkpoint(
        model_spec=spec,
        iteration=iteration,
        values={name: p.value.copy() for name, p in params.items()},
        anchors={name: p.anchor.copy() for name, p in params.items()},
        prev_unconstrained={
            name: p.prev_unconstrained.copy()
            for name, p in params.items()
            if p.prev_unconstrained is not None
        },
        gammas=gammas,
        optimizer={**meta, "tensors": tensors},
        rng={"seed": config.seed},
        extra={
            "phase": "finetune",
            "method": config.method,
            "fwd_count": counting.fwd_count,
            "bwd_count": counting.bwd_count,
        },
    )


def _restore_from_checkpoint(ckpt: Checkpoint, params, optimizer, counting: CountingModel):
    for name, p in params.items():
        p.value = ckpt.values[name].copy()
        p.anchor = ckpt.anchors[name].copy()
        prev = ckpt.prev_unconstrained.get(name)
        p.prev_unconstrained = None if prev is None else prev.copy()
        p.grad = None
    live_gammas = getattr(optimizer, "gammas", {})
    for name, state in ckpt.gammas.items():
        live_gammas[name] = GammaState(**state)
    tensors = ckpt.optimizer.get("tensors", {})
    meta = {k: v for k, v in ckpt.optimizer.items() if k != "tensors"}
    _restore_optimizer_state(optimizer, meta, tensors)
    counting.fwd_count = int(ckpt.extra.get("fwd_count", 0))
    counting.bwd_count = int(ckpt.extra.get("bwd_count", 0))
    return ckpt.iteration


def run_experiment(config: ExperimentConfig, resume: Optional[Path] = None) -> RunRecord:
    """Pretrain if needed, fine-tune with the configured method, evaluate, persist.

    Writes ``metrics.csv``, ``metrics.json``, ``summary.json`` and
    ``state.ckpt`` into the output directory and returns the run record.
    """
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    dataset = generate_shift_dataset(config.dataset_spec(), config.seed)
    spec = model_spec_from_config(config)

    pre_path = Path(config.pretrain_path) if config.pretrain_path else outdir / "pretrain.ckpt"
    if not pre_path.exists():
        pretrain(config, dataset=dataset, path=pre_path)
    pre = load_checkpoint(pre_path)
    if pre.spec_hash != spec_hash(spec):
        raise RunError(f"pretrained checkpoint at {pre_path} was built for a different model")

    ft_all = finetune_subsample(dataset, config.finetune_n, config.finetune_skew)
    if config.method == "tpgm":
        n_val = max(1, int(len(ft_all) * TPGM_VAL_FRACTION))
        ft_train = Split(ft_all.inputs[:-n_val], ft_all.labels[:-n_val])
        ft_val = Split(ft_all.inputs[-n_val:], ft_all.labels[-n_val:])
    else:
        ft_train, ft_val = ft_all, None

    counting = CountingModel(spec)
    params = make_managed(pre.values, anchors=pre.anchors)
    optimizer = _build_optimizer(config, params, counting)

    start_iter = 0
    if resume is not None:
        resume = Path(resume)
        if not resume.exists():
            raise RunError(f"resume checkpoint {resume} not found")
        ckpt = load_checkpoint(resume)
        if ckpt.spec_hash != spec_hash(spec):
            raise RunError(f"resume checkpoint {resume} was built for a different model")
        start_iter = _restore_from_checkpoint(ckpt, params, optimizer, counting)

    total_iters = config.total_iters(len(ft_train))
    gamma_names = tuple(_gamma_values(optimizer))
    record = RunRecord(gamma_names=gamma_names)
    root = SeededRng(config.seed)

    lpft_boundary = total_iters // 2 if config.method == "lp-ft" else 0

    max_excess = -math.inf
    for t in range(start_iter + 1, total_iters + 1):
        tic = time.perf_counter()
        batch = draw_batch(root.derive(_TAG_BATCH, t), ft_train, config.batch_size)
        values = {name: p.value for name, p in params.items()}
        loss, grads = counting.loss_and_grads(values, batch)
        for name, p in params.items():
            g = grads[name]
            if config.method == "l2-sp":
                g = g + l2_sp_grad(p.value, p.anchor, config.l2_sp_lambda)
            p.grad = g
        probe_phase = config.method == "linear-probe" or (
            config.method == "lp-ft" and t <= lpft_boundary
        )
        if probe_phase:
            freeze_mask(params, head_names(spec))
        if config.method == "tpgm":
            val_batches = [
                draw_batch(root.derive(_TAG_VAL, t, j), ft_val, config.batch_size)
                for j in range(config.tpgm_inner_iters)
            ]
            optimizer.step(val_batches)
        else:
            optimizer.step()

        secs = time.perf_counter() - tic
        record.add_row(t, loss, secs, counting.fwd_count, counting.bwd_count,
                       _gamma_values(optimizer))
        excess = _constraint_excess(optimizer, params)
        if excess is not None:
            max_excess = max(max_excess, excess)
        if not math.isfinite(loss):
            emit_metrics(record, "csv", outdir / "metrics.csv")
            record.summary = {"method": config.method, "seed": config.seed,
                              "diverged_at": t}
            write_summary(record, outdir / "summary.json")
            raise RunError(f"training loss diverged at iteration {t}")
        if config.checkpoint_every and t % config.checkpoint_every == 0:
            save_checkpoint(
                _run_checkpoint(config, spec, params, optimizer, t, counting),
                outdir / f"ckpt_iter{t}.ckpt",
            )

    final_values = {name: p.value for name, p in params.items()}
    summary = {"method": config.method, "seed": config.seed,
               "iterations": total_iters,
               "final_loss": record.rows[-1][1] if record.rows else None}
    summary.update(evaluate(spec, final_values, dataset))
    if max_excess > -math.inf:
        summary["constraint_max_excess"] = max_excess
    if config.wise_ratio is not None:
        anchors = {name: p.anchor for name, p in params.items()}
        mixed = wise_interpolate_params(final_values, anchors, config.wise_ratio)
        for key, value in evaluate(spec, mixed, dataset).items():
            summary[f"wise.{key}"] = value
    if isinstance(optimizer, HyperSgd):
        summary["final_alpha"] = optimizer.alpha
    record.summary = summary

    emit_metrics(record, "csv", outdir / "metrics.csv")
    emit_metrics(record, "json", outdir / "metrics.json")
    write_summary(record, outdir / "summary.json")
    save_checkpoint(
        _run_checkpoint(config, spec, params, optimizer, total_iters, counting),
        outdir / "state.ckpt",
    )
    return record
