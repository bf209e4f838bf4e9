"""Experiment orchestration: configs, the training loop with the
orthogonal-weight update interleaved, ablations, finite-difference
gradient checks, metric CSVs, and JSON checkpoints.

Config schema (JSON, unknown keys anywhere are errors):

    {
      "task":      {"name": "adding" | "copying" | "parenthesis" | "denoise",
                    "T": int,
                    "alphabet_n": int    (denoise only),
                    "n_pairs": int       (parenthesis only),
                    "final_only": bool   (parenthesis only)},
      "model":     {"variant": "GRU" | "NC-GRU",
                    "hidden": int,
                    "ortho_set": ["U_r", "U_u", "U_c"] subset (NC-GRU only;
                                 default ["U_r", "U_c"]),
                    "num_neg": int       (default hidden // 2),
                    "neumann_order": 1 | 2 | 3,
                    "reset_every": int   (0 disables resets),
                    "exact_inverse_mode": bool},
      "optimizer": {"kind": "sgd" | "rmsprop" | "adam",
                    "lr": float,
                    "lr_A": float        (default lr)},
      "train":     {"iterations": int, "batch_size": int, "seed": int,
                    "eval_every": int (default 50),
                    "eval_batch_size": int (default batch_size)},
      "output":    "directory"           (optional)
    }

Seeding layout, all derived from train.seed: cell weights use seed, the
orthogonal states seed+101/102/103 (u_r/u_u/u_c), the readout seed+104,
the held-out eval batch seed+1 (generated once), and the training batch of
iteration k uses seed+2+k. Nothing reads global RNG state, so a run is a
pure function of its config.

Each training iteration: generate batch -> sequence_bptt -> optimizer
steps for ordinary weights and the readout -> for every weight in
ortho_set, grad_pullback then a Neumann (or exact-inverse) step -> emit a
MetricRow. A non-finite loss or gradient ends the run with one structured
row (train_loss = nan) and status "numeric_error" instead of a crash.

The metrics CSV must be byte-identical across reruns of the same config
and seed, so its wall_ms column is pinned to 0; measured per-iteration
times go to a timing.csv sidecar next to it.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tasks
from .cells import (CellParams, FinalStateMse, cell_backward, cell_forward,
                    sequence_bptt, sequence_forward)
from .errors import ConfigError, ContractError, NumericError
from .optim import Optimizer
from .orthocore import SkewOrthogonal, cayley_transform
from .tasks import TaskBatch, make_batch, task_dims

_ORTHO_ORDER = ("u_r", "u_u", "u_c")
_SKEW_SEED = {"u_r": 101, "u_u": 102, "u_c": 103}
_READOUT_SEED = 104
_EVAL_SEED = 1
_BATCH_SEED_BASE = 2

METRICS_HEADER = "step,train_loss,eval_loss,drift,contraction_norm,wall_ms"


# ---------------------------------------------------------------------------
# configuration


def _check_keys(blob: dict, allowed: tuple[str, ...], where: str) -> None:
    unknown = sorted(set(blob) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def _require(blob: dict, key: str, where: str):
    if key not in blob:
        raise ConfigError(f"missing required key {key!r} in {where}")
    return blob[key]


@dataclass
class TaskSection:
    name: str
    T: int
    alphabet_n: int = tasks.DENOISE_ALPHABET
    n_pairs: int = tasks.PARENTHESIS_PAIRS
    final_only: bool = False

    @classmethod
    def from_dict(cls, blob: dict) -> "TaskSection":
        _check_keys(blob, ("name", "T", "alphabet_n", "n_pairs", "final_only"), "task")
        name = str(_require(blob, "name", "task"))
        if name not in tasks.TASK_NAMES:
            raise ConfigError(f"task.name must be one of {tasks.TASK_NAMES}, got {name!r}")
        if "alphabet_n" in blob and name != "denoise":
            raise ConfigError("task.alphabet_n only applies to the denoise task")
        if ("n_pairs" in blob or "final_only" in blob) and name != "parenthesis":
            raise ConfigError("task.n_pairs / task.final_only only apply to the parenthesis task")
        sec = cls(name=name, T=int(_require(blob, "T", "task")),
                  alphabet_n=int(blob.get("alphabet_n", tasks.DENOISE_ALPHABET)),
                  n_pairs=int(blob.get("n_pairs", tasks.PARENTHESIS_PAIRS)),
                  final_only=bool(blob.get("final_only", False)))
        min_t = {"adding": 2, "copying": 1, "parenthesis": 1, "denoise": 11}[name]
        if sec.T < min_t:
            raise ConfigError(f"task {name!r} needs T >= {min_t}, got {sec.T}")
        if not 1 <= sec.n_pairs <= tasks.PARENTHESIS_PAIRS:
            raise ConfigError(f"task.n_pairs must be in [1, {tasks.PARENTHESIS_PAIRS}]")
        if sec.alphabet_n < 2:
            raise ConfigError("task.alphabet_n must be >= 2")
        return sec

    def generator_kwargs(self) -> dict:
        if self.name == "denoise":
            return {"alphabet_n": self.alphabet_n}
        if self.name == "parenthesis":
            return {"n_pairs": self.n_pairs, "final_only": self.final_only}
        return {}

    def dims(self) -> tuple[int, int]:
        return task_dims(self.name, alphabet_n=self.alphabet_n, n_pairs=self.n_pairs)

    def to_dict(self) -> dict:
        out = {"name": self.name, "T": self.T}
        if self.name == "denoise":
            out["alphabet_n"] = self.alphabet_n
        if self.name == "parenthesis":
            out["n_pairs"] = self.n_pairs
            out["final_only"] = self.final_only
        return out


_VARIANT_ALIASES = {"gru": "gru", "nc-gru": "ncgru", "ncgru": "ncgru"}
_ORTHO_ALIASES = {"u_r": "u_r", "u_u": "u_u", "u_c": "u_c"}


@dataclass
class ModelSection:
    variant: str
    hidden: int
    ortho_set: tuple[str, ...]
    num_neg: int | None = None
    neumann_order: int = 2
    reset_every: int = 50
    exact_inverse_mode: bool = False

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelSection":
        _check_keys(blob, ("variant", "hidden", "ortho_set", "num_neg",
                           "neumann_order", "reset_every", "exact_inverse_mode"), "model")
        raw_variant = str(_require(blob, "variant", "model")).lower()
        if raw_variant not in _VARIANT_ALIASES:
            raise ConfigError(f"model.variant must be GRU or NC-GRU, got {blob['variant']!r}")
        variant = _VARIANT_ALIASES[raw_variant]
        hidden = int(_require(blob, "hidden", "model"))
        if hidden < 2:
            raise ConfigError(f"model.hidden must be >= 2, got {hidden}")
        if "ortho_set" in blob:
            raw = blob["ortho_set"]
            if not isinstance(raw, (list, tuple)):
                raise ConfigError("model.ortho_set must be a list of weight names")
            canon = []
            for item in raw:
                key = str(item).lower()
                if key not in _ORTHO_ALIASES:
                    raise ConfigError(f"model.ortho_set entry {item!r} is not one of U_r, U_u, U_c")
                canon.append(_ORTHO_ALIASES[key])
            if len(set(canon)) != len(canon):
                raise ConfigError("model.ortho_set has duplicate entries")
            ortho = tuple(name for name in _ORTHO_ORDER if name in canon)
        else:
            ortho = ("u_r", "u_c") if variant == "ncgru" else ()
        if variant == "gru" and ortho:
            raise ConfigError("model.ortho_set applies to the NC-GRU variant only")
        sec = cls(variant=variant, hidden=hidden, ortho_set=ortho,
                  num_neg=int(blob["num_neg"]) if "num_neg" in blob else None,
                  neumann_order=int(blob.get("neumann_order", 2)),
                  reset_every=int(blob.get("reset_every", 50)),
                  exact_inverse_mode=bool(blob.get("exact_inverse_mode", False)))
        if sec.neumann_order not in (1, 2, 3):
            raise ConfigError(f"model.neumann_order must be 1, 2 or 3, got {sec.neumann_order}")
        if sec.reset_every < 0:
            raise ConfigError(f"model.reset_every must be >= 0, got {sec.reset_every}")
        if sec.num_neg is not None and not 0 <= sec.num_neg <= hidden:
            raise ConfigError(f"model.num_neg must be in [0, {hidden}], got {sec.num_neg}")
        return sec

    def to_dict(self) -> dict:
        out = {"variant": "NC-GRU" if self.variant == "ncgru" else "GRU",
               "hidden": self.hidden,
               "ortho_set": [name.replace("u_", "U_") for name in self.ortho_set],
               "neumann_order": self.neumann_order,
               "reset_every": self.reset_every,
               "exact_inverse_mode": self.exact_inverse_mode}
        if self.num_neg is not None:
            out["num_neg"] = self.num_neg
        return out


@dataclass
class OptimizerSection:
    kind: str
    lr: float
    lr_a: float | None = None

    @classmethod
    def from_dict(cls, blob: dict) -> "OptimizerSection":
        _check_keys(blob, ("kind", "lr", "lr_A"), "optimizer")
        kind = str(_require(blob, "kind", "optimizer")).lower()
        if kind not in ("sgd", "rmsprop", "adam"):
            raise ConfigError(f"optimizer.kind must be sgd, rmsprop or adam, got {blob['kind']!r}")
        lr = float(_require(blob, "lr", "optimizer"))
        lr_a = float(blob["lr_A"]) if "lr_A" in blob else None
        if lr <= 0 or (lr_a is not None and lr_a <= 0):
            raise ConfigError("learning rates must be positive")
        return cls(kind=kind, lr=lr, lr_a=lr_a)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "lr": self.lr}
        if self.lr_a is not None:
            out["lr_A"] = self.lr_a
        return out


@dataclass
class TrainSection:
    iterations: int
    batch_size: int
    seed: int
    eval_every: int = 50
    eval_batch_size: int | None = None

    @classmethod
    def from_dict(cls, blob: dict) -> "TrainSection":
        _check_keys(blob, ("iterations", "batch_size", "seed", "eval_every",
                           "eval_batch_size"), "train")
        sec = cls(iterations=int(_require(blob, "iterations", "train")),
                  batch_size=int(_require(blob, "batch_size", "train")),
                  seed=int(_require(blob, "seed", "train")),
                  eval_every=int(blob.get("eval_every", 50)),
                  eval_batch_size=int(blob["eval_batch_size"]) if "eval_batch_size" in blob else None)
        if sec.iterations < 0:
            raise ConfigError(f"train.iterations must be >= 0, got {sec.iterations}")
        if sec.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {sec.batch_size}")
        if sec.eval_every < 1:
            raise ConfigError(f"train.eval_every must be >= 1, got {sec.eval_every}")
        if sec.eval_batch_size is not None and sec.eval_batch_size < 1:
            raise ConfigError("train.eval_batch_size must be >= 1")
        return sec

    def to_dict(self) -> dict:
        out = {"iterations": self.iterations, "batch_size": self.batch_size,
               "seed": self.seed, "eval_every": self.eval_every}
        if self.eval_batch_size is not None:
            out["eval_batch_size"] = self.eval_batch_size
        return out


@dataclass
class ExperimentConfig:
    task: TaskSection
    model: ModelSection
    optimizer: OptimizerSection
    train: TrainSection
    output: str | None = None

    @classmethod
    def from_dict(cls, blob: dict) -> "ExperimentConfig":
        if not isinstance(blob, dict):
            raise ConfigError("config root must be a JSON object")
        _check_keys(blob, ("task", "model", "optimizer", "train", "output"), "config root")
        for section in ("task", "model", "optimizer", "train"):
            if section not in blob:
                raise ConfigError(f"missing required section {section!r}")
            if not isinstance(blob[section], dict):
                raise ConfigError(f"section {section!r} must be a JSON object")
        output = blob.get("output")
        if output is not None and not isinstance(output, str):
            raise ConfigError("output must be a directory path string")
        cfg = cls(task=TaskSection.from_dict(blob["task"]),
                  model=ModelSection.from_dict(blob["model"]),
                  optimizer=OptimizerSection.from_dict(blob["optimizer"]),
                  train=TrainSection.from_dict(blob["train"]),
                  output=output)
        if cfg.model.num_neg is not None and cfg.model.num_neg > cfg.model.hidden:
            raise ConfigError("model.num_neg exceeds model.hidden")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                blob = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"config {path} is not valid JSON: {err}") from err
        return cls.from_dict(blob)

    def to_dict(self) -> dict:
        out = {"task": self.task.to_dict(), "model": self.model.to_dict(),
               "optimizer": self.optimizer.to_dict(), "train": self.train.to_dict()}
        if self.output is not None:
            out["output"] = self.output
        return out


# ---------------------------------------------------------------------------
# readout losses


class LinearReadoutMse:
    """y = W h_T + b on the final state; loss is the squared error summed
    over output entries and averaged over the batch."""

    def __init__(self, w: np.ndarray, b: np.ndarray, targets: np.ndarray):
        self.w = w
        self.b = b
        self.targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        self.grad_w = np.zeros_like(w)
        self.grad_b = np.zeros_like(b)

    def loss_and_grads(self, hs):
        h_last = hs[-1]
        squeeze = h_last.ndim == 1
        h = h_last[:, None] if squeeze else h_last
        y = self.w @ h + self.b[:, None]
        diff = y - self.targets
        batch = h.shape[1]
        loss = float(np.sum(diff * diff)) / batch
        g_y = 2.0 * diff / batch
        self.grad_w = g_y @ h.T
        self.grad_b = np.sum(g_y, axis=1)
        g_h = self.w.T @ g_y
        grads = [None] * len(hs)
        grads[-1] = g_h[:, 0] if squeeze else g_h
        return loss, grads


class SoftmaxReadoutXent:
    """Per-step softmax cross-entropy through a shared linear readout,
    averaged over batch and steps (final step only when final_only)."""

    def __init__(self, w: np.ndarray, b: np.ndarray, targets: np.ndarray,
                 final_only: bool = False):
        self.w = w
        self.b = b
        self.targets = np.asarray(targets, dtype=np.int64)
        self.final_only = final_only
        self.grad_w = np.zeros_like(w)
        self.grad_b = np.zeros_like(b)

    def loss_and_grads(self, hs):
        steps = len(hs)
        if self.targets.ndim != 2 or self.targets.shape[1] != steps:
            raise ContractError(
                f"targets shape {self.targets.shape} does not cover {steps} steps")
        batch = self.targets.shape[0]
        denom = batch if self.final_only else batch * steps
        self.grad_w = np.zeros_like(self.w)
        self.grad_b = np.zeros_like(self.b)
        cols = np.arange(batch)
        loss = 0.0
        grads: list = [None] * steps
        for t in range(steps):
            if self.final_only and t != steps - 1:
                continue
            h = hs[t]
            squeeze = h.ndim == 1
            hcol = h[:, None] if squeeze else h
            logits = self.w @ hcol + self.b[:, None]
            logits -= np.max(logits, axis=0, keepdims=True)
            logz = np.log(np.sum(np.exp(logits), axis=0))
            tgt = self.targets[:, t]
            loss += float(np.sum(logz - logits[tgt, cols]))
            probs = np.exp(logits - logz[None, :])
            probs[tgt, cols] -= 1.0
            probs /= denom
            self.grad_w += probs @ hcol.T
            self.grad_b += np.sum(probs, axis=1)
            g_h = self.w.T @ probs
            grads[t] = g_h[:, 0] if squeeze else g_h
        return loss / denom, grads


# ---------------------------------------------------------------------------
# model assembly


@dataclass
class Model:
    params: CellParams
    skews: dict
    readout_w: np.ndarray
    readout_b: np.ndarray


def build_model(cfg: ExperimentConfig) -> Model:
    in_dim, out_dim = cfg.task.dims()
    m = cfg.model
    seed = cfg.train.seed
    params = CellParams.init(m.variant, m.hidden, in_dim, seed, ortho_set=m.ortho_set)
    skews = {}
    for name in m.ortho_set:
        skew = SkewOrthogonal.create(
            m.hidden, seed + _SKEW_SEED[name],
            num_neg=m.num_neg, neumann_order=m.neumann_order,
            reset_every=m.reset_every)
        skews[name] = skew
        setattr(params, name, skew.u)
    rng = np.random.default_rng(seed + _READOUT_SEED)
    lim = np.sqrt(6.0 / (out_dim + m.hidden))
    readout_w = rng.uniform(-lim, lim, (out_dim, m.hidden))
    readout_b = np.zeros(out_dim)
    return Model(params=params, skews=skews, readout_w=readout_w, readout_b=readout_b)


def make_loss(model: Model, batch: TaskBatch):
    if batch.loss_kind == "mse":
        return LinearReadoutMse(model.readout_w, model.readout_b, batch.targets)
    return SoftmaxReadoutXent(model.readout_w, model.readout_b, batch.targets,
                              final_only=batch.final_only)


def evaluate(model: Model, batch: TaskBatch) -> float:
    hs = sequence_forward(model.params, batch.step_inputs())
    loss, _ = make_loss(model, batch).loss_and_grads(hs)
    return float(loss)


# ---------------------------------------------------------------------------
# training


@dataclass
class MetricRow:
    step: int
    train_loss: float
    eval_loss: float | None
    drift: float
    contraction_norm: float
    wall_ms: int = 0

    def to_csv_row(self) -> str:
        ev = "" if self.eval_loss is None else repr(self.eval_loss)
        return (f"{self.step},{self.train_loss!r},{ev},"
                f"{self.drift!r},{self.contraction_norm!r},{self.wall_ms}")


@dataclass
class RunResult:
    config: ExperimentConfig
    status: str
    metrics: list
    final_eval: float | None
    max_drift: float
    max_contraction: float
    out_dir: str | None = None
    metrics_path: str | None = None
    checkpoint_path: str | None = None


def run_training(cfg: ExperimentConfig, out_dir: str | None = None,
                 seed: int | None = None) -> RunResult:
    """Train per cfg; see the module docstring for the loop layout.

    out_dir and seed override the config when given. With no output
    directory anywhere, the run stays in memory and writes nothing.
    """
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    if out_dir is None:
        out_dir = cfg.output

    model = build_model(cfg)
    params = model.params
    ortho = cfg.model.ortho_set
    opt = Optimizer(cfg.optimizer.kind, cfg.optimizer.lr)
    opt_a = None
    if ortho:
        opt_a = Optimizer(cfg.optimizer.kind,
                          cfg.optimizer.lr if cfg.optimizer.lr_a is None else cfg.optimizer.lr_a)

    tsec = cfg.task
    eval_bs = cfg.train.eval_batch_size or cfg.train.batch_size
    eval_batch = make_batch(tsec.name, tsec.T, eval_bs,
                            cfg.train.seed + _EVAL_SEED, **tsec.generator_kwargs())

    metrics: list[MetricRow] = []
    timings: list[tuple[int, int]] = []
    status = "completed"
    final_eval = None
    max_drift = 0.0
    max_contraction = 0.0

    for k in range(1, cfg.train.iterations + 1):
        t0 = time.perf_counter()
        batch = make_batch(tsec.name, tsec.T, cfg.train.batch_size,
                           cfg.train.seed + _BATCH_SEED_BASE + k, **tsec.generator_kwargs())
        loss_obj = make_loss(model, batch)
        try:
            # Overflow in a diverging run shows up as a non-finite loss or
            # gradient check, not as a flood of runtime warnings.
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                result = sequence_bptt(params, batch.step_inputs(), loss_obj)
                if not np.isfinite(result.loss):
                    raise NumericError(f"non-finite training loss at iteration {k}")

                model.readout_w -= opt.step("readout_w", loss_obj.grad_w)
                model.readout_b -= opt.step("readout_b", loss_obj.grad_b)
                for name, arr in params.named_arrays():
                    if name in ortho:
                        continue
                    arr -= opt.step(name, getattr(result.grads, name))

                drift = 0.0
                contraction = 0.0
                for name in ortho:
                    skew = model.skews[name]
                    grad_a = skew.grad_pullback(getattr(result.grads, name))
                    delta = opt_a.step("A_" + name, grad_a)
                    if cfg.model.exact_inverse_mode:
                        diag = skew.exact_step(delta)
                    else:
                        diag = skew.neumann_step(delta)
                    setattr(params, name, skew.u)
                    drift = max(drift, diag.drift)
                    contraction = max(contraction, diag.contraction_norm)
        except NumericError:
            metrics.append(MetricRow(step=k, train_loss=float("nan"), eval_loss=None,
                                     drift=max_drift, contraction_norm=max_contraction))
            status = "numeric_error"
            break

        max_drift = max(max_drift, drift)
        max_contraction = max(max_contraction, contraction)
        eval_loss = None
        if k % cfg.train.eval_every == 0 or k == cfg.train.iterations:
            eval_loss = evaluate(model, eval_batch)
            final_eval = eval_loss
        metrics.append(MetricRow(step=k, train_loss=result.loss, eval_loss=eval_loss,
                                 drift=drift, contraction_norm=contraction))
        timings.append((k, int(round((time.perf_counter() - t0) * 1000))))

    run = RunResult(config=cfg, status=status, metrics=metrics, final_eval=final_eval,
                    max_drift=max_drift, max_contraction=max_contraction)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        run.out_dir = out_dir
        run.metrics_path = os.path.join(out_dir, "metrics.csv")
        write_metrics_csv(metrics, run.metrics_path)
        with open(os.path.join(out_dir, "timing.csv"), "w", encoding="utf-8") as fh:
            fh.write("step,wall_ms\n")
            for step, ms in timings:
                fh.write(f"{step},{ms}\n")
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        run.checkpoint_path = os.path.join(out_dir, "checkpoint.json")
        save_checkpoint(run.checkpoint_path, cfg, model, opt, opt_a,
                        step=len(metrics) if status == "completed" else metrics[-1].step)
    return run


def write_metrics_csv(metrics, path) -> None:
    lines = [METRICS_HEADER]
    lines.extend(row.to_csv_row() for row in metrics)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[MetricRow]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != METRICS_HEADER:
            raise ContractError(f"unexpected metrics header {header!r}")
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 6:
                raise ContractError(f"malformed metrics row {line!r}")
            rows.append(MetricRow(step=int(parts[0]), train_loss=float(parts[1]),
                                  eval_loss=float(parts[2]) if parts[2] else None,
                                  drift=float(parts[3]), contraction_norm=float(parts[4]),
                                  wall_ms=int(parts[5])))
    return rows


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, cfg: ExperimentConfig, model: Model,
                    opt: Optimizer, opt_a: Optimizer | None, step: int) -> None:
    """JSON snapshot of everything a run mutates. Floats go through
    Python's shortest round-trip repr, so load -> save reproduces the
    file byte for byte."""
    blob = {
        "format": "ncgru-checkpoint-v1",
        "step": step,
        "config": cfg.to_dict(),
        "params": {name: arr.tolist() for name, arr in model.params.named_arrays()},
        "skews": {name: skew.to_dict() for name, skew in model.skews.items()},
        "readout": {"w": model.readout_w.tolist(), "b": model.readout_b.tolist()},
        "optimizer": opt.to_dict(),
        "optimizer_A": opt_a.to_dict() if opt_a is not None else None,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(blob, fh, indent=1)
        fh.write("\n")


@dataclass
class Checkpoint:
    config: ExperimentConfig
    model: Model
    optimizer: Optimizer
    optimizer_a: Optimizer | None
    step: int


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format") != "ncgru-checkpoint-v1":
        raise ContractError(f"not an ncgru checkpoint: {path}")
    cfg = ExperimentConfig.from_dict(blob["config"])
    model = build_model(cfg)
    for name, arr in blob["params"].items():
        setattr(model.params, name, np.asarray(arr, dtype=np.float64))
    model.skews = {name: SkewOrthogonal.from_dict(sub) for name, sub in blob["skews"].items()}
    for name, skew in model.skews.items():
        setattr(model.params, name, skew.u)
    model.readout_w = np.asarray(blob["readout"]["w"], dtype=np.float64)
    model.readout_b = np.asarray(blob["readout"]["b"], dtype=np.float64)
    opt = Optimizer.from_dict(blob["optimizer"])
    opt_a = Optimizer.from_dict(blob["optimizer_A"]) if blob["optimizer_A"] else None
    return Checkpoint(config=cfg, model=model, optimizer=opt, optimizer_a=opt_a,
                      step=int(blob["step"]))


# ---------------------------------------------------------------------------
# ablations


ABLATION_MODES = ("neumann-vs-inverse", "ortho-placement", "norm-monitor")


def run_ablation(mode: str, cfg: ExperimentConfig, out_dir: str | None = None
                 ) -> list[tuple[str, RunResult]]:
    """Run the labeled arms of an ablation, identical seeds across arms.

    neumann-vs-inverse: Neumann orders 1, 2, 3 plus the exact-inverse arm.
    ortho-placement: ortho_set in {U_c}, {U_r, U_c}, {U_r, U_u, U_c}.
    norm-monitor: the config as given, one arm; pair with the metrics CSV
    to check every contraction_norm stays below 1.

    out_dir falls back to the config's output directory; when either is set,
    arms write under per-label subdirectories next to a summary.json.
    """
    if mode not in ABLATION_MODES:
        raise ContractError(f"unknown ablation mode {mode!r}, expected one of {ABLATION_MODES}")
    if out_dir is None:
        # Without a fallback the arms would each inherit cfg.output and
        # overwrite one another's artifacts.
        out_dir = cfg.output
    if mode == "neumann-vs-inverse":
        arms = [(f"order{p}", replace(cfg, model=replace(cfg.model, neumann_order=p,
                                                         exact_inverse_mode=False)))
                for p in (1, 2, 3)]
        arms.append(("exact", replace(cfg, model=replace(cfg.model, exact_inverse_mode=True))))
    elif mode == "ortho-placement":
        if cfg.model.variant != "ncgru":
            raise ContractError("ortho-placement ablation needs an NC-GRU config")
        placements = [("uc", ("u_c",)), ("ur_uc", ("u_r", "u_c")),
                      ("ur_uu_uc", ("u_r", "u_u", "u_c"))]
        arms = [(label, replace(cfg, model=replace(cfg.model, ortho_set=ortho)))
                for label, ortho in placements]
    else:
        arms = [("monitor", cfg)]

    results = []
    for label, arm_cfg in arms:
        arm_out = os.path.join(out_dir, label) if out_dir else None
        results.append((label, run_training(arm_cfg, out_dir=arm_out)))
    if out_dir:
        summary = {label: {"status": run.status,
                           "final_eval": run.final_eval,
                           "max_drift": run.max_drift,
                           "max_contraction": run.max_contraction}
                   for label, run in results}
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return results


# ---------------------------------------------------------------------------
# finite-difference gradient checks


@dataclass
class GradcheckReport:
    scope: str
    tol: float
    max_rel_err: float
    per_case: dict
    passed: bool


def _fd_grad(f, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(arr)
    flat = arr.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        lp = f()
        flat[i] = keep - eps
        lm = f()
        flat[i] = keep
        out.ravel()[i] = (lp - lm) / (2.0 * eps)
    return out


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(fd))), 1e-12)
    return float(np.max(np.abs(analytic - fd))) / scale


def _gradcheck_cayley(seed: int, instances: int) -> dict:
    errs = {}
    for i in range(instances):
        rng = np.random.default_rng(seed + 1000 + i)
        n = int(rng.integers(2, 9))
        skew = SkewOrthogonal.create(n, seed + 2000 + i)
        c = rng.standard_normal((n, n))
        analytic = skew.grad_pullback(c)
        fd = np.zeros_like(analytic)
        eps = 1e-6
        for r in range(n):
            for s in range(r + 1, n):
                def val(sign):
                    a = skew.a.copy()
                    a[r, s] += sign * eps
                    a[s, r] -= sign * eps
                    return float(np.sum(c * cayley_transform(a, skew.d)))
                fd[r, s] = (val(+1.0) - val(-1.0)) / (2.0 * eps)
                fd[s, r] = -fd[r, s]
        errs[f"cayley_n{n}_i{i}"] = _rel_err(analytic, fd)
    return errs


def _random_cell(variant: str, seed: int, n: int = 4, m: int = 3, batch: int = 2,
                 kink_margin: float = 1e-3):
    """Random params/inputs, rejecting NC-GRU draws near a modReLU kink."""
    for attempt in range(50):
        rng = np.random.default_rng(seed + 7919 * attempt)
        p = CellParams.init(variant, n, m, int(rng.integers(0, 2**31)))
        if variant == "ncgru":
            p.modrelu_b = rng.uniform(-0.5, 0.5, n)
        x = rng.standard_normal((m, batch))
        h = rng.uniform(-1.0, 1.0, (n, batch))
        _, cache = cell_forward(p, x, h)
        if variant == "ncgru":
            margin = np.min(np.abs(np.abs(cache.pre_c) + p.modrelu_b[:, None]))
            if margin < kink_margin:
                continue
        target = rng.standard_normal((n, batch))
        return p, x, h, target
    raise ContractError("could not draw a kink-free NC-GRU instance")


def _gradcheck_cell(seed: int, instances: int) -> dict:
    errs = {}
    for variant in ("gru", "ncgru"):
        for i in range(instances):
            p, x, h, target = _random_cell(variant, seed + 31 * i)
            loss = FinalStateMse(target)

            def value() -> float:
                h1, _ = cell_forward(p, x, h)
                return loss.loss_and_grads([h1])[0]

            _, cache = cell_forward(p, x, h)
            _, step_grads = loss.loss_and_grads([cache.h_t])
            grads, g_hprev = cell_backward(p, cache, step_grads[-1])
            for name, arr in p.named_arrays():
                fd = _fd_grad(value, arr)
                errs[f"{variant}_{name}_i{i}"] = _rel_err(getattr(grads, name), fd)
            fd_h = _fd_grad(value, h)
            errs[f"{variant}_h_prev_i{i}"] = _rel_err(g_hprev, fd_h)
    return errs


def _gradcheck_bptt(seed: int, instances: int, length: int = 5) -> dict:
    errs = {}
    for variant in ("gru", "ncgru"):
        for i in range(instances):
            p, _, _, target = _random_cell(variant, seed + 77 * i)
            rng = np.random.default_rng(seed + 13 + i)
            xs = [rng.standard_normal((p.m, 2)) for _ in range(length)]
            loss = FinalStateMse(target)

            def value() -> float:
                hs = sequence_forward(p, xs)
                return loss.loss_and_grads(hs)[0]

            result = sequence_bptt(p, xs, loss)
            for name, arr in p.named_arrays():
                fd = _fd_grad(value, arr)
                errs[f"{variant}_{name}_i{i}"] = _rel_err(getattr(result.grads, name), fd)
    return errs


def run_gradcheck(scope: str, seed: int = 0, instances: int | None = None) -> GradcheckReport:
    """Finite-difference check of one analytic-gradient surface.

    scope "cayley" checks grad_pullback through the exact transform
    (tol 1e-6); "cell" checks one-step backward passes and "bptt" the full
    unrolled sequence (tol 1e-5), both on kink-free instances.
    """
    if scope == "cayley":
        errs = _gradcheck_cayley(seed, instances or 20)
        tol = 1e-6
    elif scope == "cell":
        errs = _gradcheck_cell(seed, instances or 8)
        tol = 1e-5
    elif scope == "bptt":
        errs = _gradcheck_bptt(seed, instances or 4)
        tol = 1e-5
    else:
        raise ContractError(f"unknown gradcheck scope {scope!r}")
    worst = max(errs.values())
    return GradcheckReport(scope=scope, tol=tol, max_rel_err=worst,
                           per_case=errs, passed=worst < tol)


# ---------------------------------------------------------------------------
# parameter budgeting


def count_params(variant: str, hidden: int, in_dim: int, out_dim: int,
                 ortho_set: tuple[str, ...] = ()) -> int:
    """Trainable scalars in one cell plus its linear readout.

    A weight under the orthogonal parameterization contributes its skew
    degrees of freedom n(n-1)/2 instead of n^2; the +/-1 scaling is fixed,
    not trained. Both variants carry three n-sized bias vectors.
    """
    if variant not in ("gru", "ncgru"):
        raise ContractError(f"unknown variant {variant!r}")
    n = hidden
    full_recurrent = 3 - len(ortho_set)
    return (3 * n * in_dim + full_recurrent * n * n
            + len(ortho_set) * (n * (n - 1) // 2)
            + 3 * n + out_dim * (n + 1))


def match_hidden(budget: int, variant: str, in_dim: int, out_dim: int,
                 ortho_set: tuple[str, ...] = ()) -> int:
    """Smallest hidden size whose parameter count reaches budget
    (ceiling-rounded matching)."""
    n = 2
    while count_params(variant, n, in_dim, out_dim, ortho_set) < budget:
        n += 1
        if n > 4096:
            raise ContractError(f"no hidden size under 4096 reaches budget {budget}")
    return n
