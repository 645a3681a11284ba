"""Training, evaluation, loss comparison, and attention export.

Runs are config-driven and deterministic: the subject split hashes stable
ids, batch order derives from the master seed, and the Adam walk over
parameters is name-sorted. The same config and seed therefore produce
byte-identical checkpoints and logs.
"""

import csv
import hashlib
import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels, losses, metrics, nn, synthetic
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import TaskBatch
from .model import ClimatConfig, build_params, climat_forward
from .synthetic import Cohort, encode_clinical, load_cohort, numeric_ranges


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss, config/dataset mismatch, ...)."""


LOSS_KINDS = ("club", "ce", "tce", "mtl", "focal")


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 20

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class LossConfig:
    kind: str = "club"
    eps_tau: float = 0.1      # Algorithm-1 epsilon
    gamma: float = 2.0        # focal exponent
    aux_diag_ce: bool = False  # optional CE supervision of the diagnosis logits

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")


@dataclass
class RunConfig:
    dataset: str
    out_dir: str = "run_out"
    seed: int = 0
    precision: str = "float32"
    eval_batch: int = 256
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    model: dict = field(default_factory=dict)  # ClimatConfig overrides

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def resolve_model_config(run_cfg: RunConfig, cohort: Cohort) -> ClimatConfig:
    """Complete the model section with dataset-derived shape facts."""
    ccfg = cohort.config
    fields = dict(
        horizons=ccfg.horizons,
        n_classes=[ccfg.grades] * (ccfg.horizons + 1),
        image_size=ccfg.image_size,
        patch=ccfg.patch,
        clinical_dims=[v.onehot_width for v in ccfg.variables],
    )
    fields.update(run_cfg.model or {})
    return ClimatConfig(**fields)


# ---------------------------------------------------------------------------
# Splits and batching
# ---------------------------------------------------------------------------

def _id_bucket(subject_id: str, buckets: int) -> int:
    digest = hashlib.sha256(subject_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % buckets


def split_subjects(ids) -> tuple:
    """80/20 train/validation split on a stable hash of the subject id."""
    train, val = [], []
    for i, sid in enumerate(ids):
        (val if _id_bucket(sid, 5) == 0 else train).append(i)
    return np.asarray(train, dtype=np.intp), np.asarray(val, dtype=np.intp)


def validation_subsets(ids, val_idx, n_subsets: int = 20):
    """Disjoint subject subsets of the validation split (round-robin over
    id-sorted subjects) for paired significance testing."""
    ordered = sorted(val_idx, key=lambda i: ids[i])
    subsets = [[] for _ in range(n_subsets)]
    for pos, idx in enumerate(ordered):
        subsets[pos % n_subsets].append(idx)
    return [np.asarray(s, dtype=np.intp) for s in subsets if s]


@contextmanager
def frozen(tensors):
    """Temporarily clear requires_grad so forward passes skip the tape."""
    snapshot = [(t, t.requires_grad) for t in tensors]
    for t, _ in snapshot:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, was in snapshot:
            t.requires_grad = was


class Adam:
    """Adaptive-moment optimizer over a named tensor table, stepped in
    sorted-name order (determinism)."""

    def __init__(self, tensors: dict, cfg: OptimizerConfig):
        self.tensors = tensors
        self.cfg = cfg
        self.m = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c = self.cfg
        for name in sorted(self.tensors):
            tensor = self.tensors[name]
            grad = ad.grad_or_zero(tensor)
            kernels.adam_step(
                tensor.data.reshape(-1),
                np.ascontiguousarray(grad, dtype=tensor.data.dtype).reshape(-1),
                self.m[name].reshape(-1), self.v[name].reshape(-1),
                c.lr, c.beta1, c.beta2, c.eps, self.t,
            )


# ---------------------------------------------------------------------------
# Loss assembly
# ---------------------------------------------------------------------------

def init_nuisance(kind: str, n_tasks: int, dtype) -> Tensor:
    """Per-task nuisance vector: sigma for club/tce (starts at 1 so every
    tau_t = 1), log-variances for mtl (start at 0), unused otherwise."""
    init = np.zeros(n_tasks, dtype=dtype) if kind == "mtl" else np.ones(n_tasks, dtype=dtype)
    return Tensor(init, requires_grad=True, name="sigma")


def batch_loss(out, labels, masks, sigma: Tensor, model_cfg: ClimatConfig,
               loss_cfg: LossConfig) -> Tensor:
    """Total objective for one forward pass under the selected loss kind."""
    batch = TaskBatch(out.traj_logits, labels, masks, diag_logits=out.diag_logits)
    lam = model_cfg.consistency_weight
    kind = loss_cfg.kind
    if kind == "club":
        tau = losses.constrain_tau_t(sigma, loss_cfg.eps_tau)
        total = losses.total_loss(batch, tau, lam)
    else:
        if kind == "ce":
            rows = lambda t, lg, y: losses.ce_rows(lg, y)
        elif kind == "tce":
            tau = losses.constrain_tau_t(sigma, loss_cfg.eps_tau)
            rows = lambda t, lg, y: losses.tce_rows(lg, y, tau[t:t + 1])
        elif kind == "focal":
            rows = lambda t, lg, y: losses.focal_rows(lg, y, loss_cfg.gamma)
        elif kind == "mtl":
            rows = lambda t, lg, y: losses.mtl_rows(lg, y, sigma[t:t + 1])
        else:  # pragma: no cover - guarded by LossConfig
            raise ValueError(kind)
        total = losses.masked_task_loss(batch, rows)
        if lam > 0:
            total = total + lam * losses.consistency_loss(batch.diag_logits, batch.logits[0])
    if loss_cfg.aux_diag_ce:
        total = total + losses.ce_rows(out.diag_logits, labels[:, 0]).mean()
    return total


# ---------------------------------------------------------------------------
# Prediction and metric reports
# ---------------------------------------------------------------------------

def _softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_logits(params, model_cfg: ClimatConfig, cohort: Cohort, idx,
                   ranges, batch_size: int = 256):
    """Per-task logits [(n, n_classes_t)] for the given subjects."""
    per_task = [[] for _ in range(model_cfg.horizons + 1)]
    with frozen(list(params.values())):
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            clin = encode_clinical(cohort, ranges, chunk)
            out = climat_forward(cohort.images[chunk], clin, params, model_cfg)
            for t, lg in enumerate(out.traj_logits):
                per_task[t].append(lg.data.astype(np.float64))
    return [np.concatenate(blocks) for blocks in per_task]


@dataclass
class HorizonMetrics:
    horizon: int
    n: int
    ba: object = None
    ece: object = None
    mauc: object = None


@dataclass
class MetricsReport:
    split: str
    horizons: list
    tau: object = None

    def mean(self, key: str):
        vals = [getattr(h, key) for h in self.horizons if getattr(h, key) is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "per_horizon": [asdict(h) for h in self.horizons],
            "tau": self.tau,
            "mean_ba": self.mean("ba"),
            "mean_ece": self.mean("ece"),
        }


def metrics_from_logits(task_logits, labels, masks, split="all", tau=None) -> MetricsReport:
    """Per-horizon BA/ECE (and Hand-Till mAUC on 3-class tasks), honoring
    masks; an all-masked horizon is reported absent rather than zero."""
    rows = []
    for t, logits in enumerate(task_logits):
        sel = masks[:, t] != 0
        n = int(sel.sum())
        if n == 0:
            rows.append(HorizonMetrics(horizon=t, n=0))
            continue
        y = labels[sel, t]
        probs = _softmax_np(logits[sel])
        preds = probs.argmax(axis=1)
        ba = metrics.balanced_accuracy(y, preds)
        ece = metrics.expected_calibration_error(y, probs)
        mauc = None
        if logits.shape[1] == 3 and np.unique(y).size >= 2:
            mauc = metrics.mauc_hand_till(y, probs)
        rows.append(HorizonMetrics(horizon=t, n=n, ba=ba, ece=ece, mauc=mauc))
    return MetricsReport(split=split, horizons=rows, tau=tau)


def write_report(report: MetricsReport, out_dir, stem="metrics") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["horizon", "n", "ba", "ece", "mauc"])
        for h in report.horizons:
            writer.writerow([h.horizon, h.n] + ["" if v is None else repr(v)
                                                for v in (h.ba, h.ece, h.mauc)])
    with open(out / f"{stem}.json", "w") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    sigma: Tensor
    model_cfg: ClimatConfig
    history: list
    checkpoint_path: object
    log_path: object
    summary: dict
    train_idx: np.ndarray
    val_idx: np.ndarray


def _round_through_f32(arr: np.ndarray, dtype) -> np.ndarray:
    return arr.astype(np.float32).astype(dtype)


def _config_echo(run_cfg: RunConfig, model_cfg: ClimatConfig) -> dict:
    echo = run_cfg.to_dict()
    echo["model"] = asdict(model_cfg)
    return echo


def train(run_cfg: RunConfig, cohort: Cohort = None, write_outputs: bool = True) -> TrainResult:
    """Minimize the configured objective with Adam, jointly over model
    parameters and the per-task nuisance vector. Deterministic per seed."""
    kernels.warmup()
    if cohort is None:
        cohort = load_cohort(run_cfg.dataset)
    model_cfg = resolve_model_config(run_cfg, cohort)
    dtype = run_cfg.dtype
    params, _ = build_params(model_cfg, seed=run_cfg.seed, dtype=dtype)
    sigma = init_nuisance(run_cfg.loss.kind, model_cfg.horizons + 1, dtype)

    train_idx, val_idx = split_subjects(cohort.ids)
    if len(train_idx) == 0:
        raise TrainingError("empty training split")
    ranges = numeric_ranges(cohort, train_idx)

    opt = Adam({**params, "sigma": sigma}, run_cfg.optimizer)
    history = []
    ocfg = run_cfg.optimizer
    for epoch in range(1, ocfg.epochs + 1):
        order = np.random.default_rng([run_cfg.seed, 7919, epoch]).permutation(train_idx)
        epoch_losses = []
        for start in range(0, len(order), ocfg.batch_size):
            chunk = order[start:start + ocfg.batch_size]
            clin = encode_clinical(cohort, ranges, chunk)
            try:
                out = climat_forward(cohort.images[chunk], clin, params, model_cfg)
                loss = batch_loss(out, cohort.labels[chunk], cohort.masks[chunk],
                                  sigma, model_cfg, run_cfg.loss)
                ad.backward(loss)
            except ad.NonFiniteError as err:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // ocfg.batch_size}: {err}"
                ) from err
            epoch_losses.append(float(loss.data))
            opt.step()
        val_report = evaluate_params(params, sigma, model_cfg, run_cfg, cohort,
                                     val_idx, ranges, split="val")
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "tau": _tau_values(sigma, run_cfg.loss),
            "val_ba": [h.ba for h in val_report.horizons],
            "val_ece": [h.ece for h in val_report.horizons],
        })

    # freeze at checkpoint precision so evaluate(checkpoint) reproduces the
    # logged final metrics exactly
    for t in params.values():
        t.data = _round_through_f32(t.data, dtype)
    sigma.data = _round_through_f32(sigma.data, dtype)

    final_train = evaluate_params(params, sigma, model_cfg, run_cfg, cohort,
                                  train_idx, ranges, split="train")
    final_val = evaluate_params(params, sigma, model_cfg, run_cfg, cohort,
                                val_idx, ranges, split="val")
    summary = {
        "config": _config_echo(run_cfg, model_cfg),
        "epochs_run": ocfg.epochs,
        "initial_loss": history[0]["train_loss"] if history else None,
        "final_loss": history[-1]["train_loss"] if history else None,
        "final": {"train": final_train.to_dict(), "val": final_val.to_dict()},
    }

    checkpoint_path = log_path = None
    if write_outputs:
        out = Path(run_cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out / "checkpoint.bin"
        save_checkpoint(checkpoint_path, params, sigma, _config_echo(run_cfg, model_cfg))
        log_path = out / "train_log.csv"
        _write_history(log_path, history, model_cfg.horizons + 1)
        with open(out / "summary.json", "w") as f:
            json.dump(summary, f, sort_keys=True, indent=2)
            f.write("\n")
    return TrainResult(params=params, sigma=sigma, model_cfg=model_cfg,
                       history=history, checkpoint_path=checkpoint_path,
                       log_path=log_path, summary=summary,
                       train_idx=train_idx, val_idx=val_idx)


def _tau_values(sigma: Tensor, loss_cfg: LossConfig):
    if loss_cfg.kind in ("club", "tce"):
        return [float(x) for x in
                losses.constrain_tau(sigma.data.astype(np.float64), loss_cfg.eps_tau)]
    return None


def _write_history(path, history, n_tasks):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = (["epoch", "train_loss"]
                  + [f"tau_{t}" for t in range(n_tasks)]
                  + [f"val_ba_{t}" for t in range(n_tasks)]
                  + [f"val_ece_{t}" for t in range(n_tasks)])
        writer.writerow(header)
        for row in history:
            tau = row["tau"] if row["tau"] is not None else [""] * n_tasks
            writer.writerow(
                [row["epoch"], repr(row["train_loss"])]
                + [t if t == "" else repr(t) for t in tau]
                + [("" if v is None else repr(v)) for v in row["val_ba"]]
                + [("" if v is None else repr(v)) for v in row["val_ece"]]
            )


def evaluate_params(params, sigma, model_cfg: ClimatConfig, run_cfg: RunConfig,
                    cohort: Cohort, idx, ranges, split="all") -> MetricsReport:
    task_logits = predict_logits(params, model_cfg, cohort, idx, ranges,
                                 batch_size=run_cfg.eval_batch)
    return metrics_from_logits(task_logits, cohort.labels[idx], cohort.masks[idx],
                               split=split, tau=_tau_values(sigma, run_cfg.loss))


def evaluate_checkpoint(checkpoint_path, dataset_path=None, split="all",
                        cohort: Cohort = None) -> MetricsReport:
    """Load a checkpoint and score it on a dataset split, honoring masks."""
    ckpt = load_checkpoint(checkpoint_path)
    run_cfg = RunConfig.from_dict({**ckpt.config, "model": {}})
    model_cfg = ClimatConfig(**ckpt.config["model"])
    if cohort is None:
        cohort = load_cohort(dataset_path if dataset_path else run_cfg.dataset)
    expected_classes = [cohort.config.grades] * (cohort.config.horizons + 1)
    if model_cfg.n_classes != expected_classes:
        raise TrainingError(
            f"checkpoint predicts {model_cfg.n_classes} classes but dataset "
            f"has {expected_classes}"
        )
    dtype = run_cfg.dtype
    params = {k: Tensor(v.astype(dtype)) for k, v in ckpt.params.items()}
    sigma = Tensor(ckpt.sigma.astype(dtype))
    train_idx, val_idx = split_subjects(cohort.ids)
    ranges = numeric_ranges(cohort, train_idx)
    idx = {"train": train_idx, "val": val_idx,
           "all": np.arange(cohort.n_subjects, dtype=np.intp)}[split]
    return evaluate_params(params, sigma, model_cfg, run_cfg, cohort, idx,
                           ranges, split=split)


# ---------------------------------------------------------------------------
# Loss comparison
# ---------------------------------------------------------------------------

@dataclass
class Comparison:
    runs: list          # one row per loss x seed
    aggregates: dict    # loss -> per-horizon mean/stderr of BA and ECE
    pairwise: dict      # "a|b" -> {"ba": {...}, "ece": {...}}
    n_subsets: int

    def to_dict(self) -> dict:
        return {"runs": self.runs, "aggregates": self.aggregates,
                "pairwise": self.pairwise, "n_subsets": self.n_subsets}


def _subset_means(task_logits, cohort, subset, pos_of, key):
    """Mean-over-horizons metric for the subjects of one subset."""
    positions = np.asarray([pos_of[i] for i in subset], dtype=np.intp)
    labels = cohort.labels[subset]
    masks = cohort.masks[subset]
    report = metrics_from_logits([lg[positions] for lg in task_logits], labels, masks)
    return report.mean(key)


def compare_losses(run_cfg: RunConfig, loss_kinds, seeds, cohort: Cohort = None,
                   out_dir=None, n_subsets: int = 20) -> Comparison:
    """Train each loss x seed, report mean and stderr of BA/ECE per horizon,
    and pairwise two-sided Wilcoxon p-values over per-subset metrics."""
    if len(loss_kinds) < 2:
        raise ValueError("compare_losses needs at least 2 losses")
    if len(seeds) < 3:
        raise ValueError("compare_losses needs at least 3 seeds")
    if cohort is None:
        cohort = load_cohort(run_cfg.dataset)

    train_idx, val_idx = split_subjects(cohort.ids)
    subsets = validation_subsets(cohort.ids, val_idx, n_subsets)
    pos_of = {int(i): p for p, i in enumerate(val_idx)}
    ranges = numeric_ranges(cohort, train_idx)

    runs = []
    subset_tables = {}  # (loss, seed) -> {"ba": [...], "ece": [...]}
    reports = {}
    for kind in loss_kinds:
        for seed in seeds:
            cfg = RunConfig.from_dict({**run_cfg.to_dict(), "seed": int(seed)})
            cfg.loss.kind = kind
            result = train(cfg, cohort=cohort, write_outputs=False)
            task_logits = predict_logits(result.params, result.model_cfg, cohort,
                                         val_idx, ranges, batch_size=cfg.eval_batch)
            report = metrics_from_logits(task_logits, cohort.labels[val_idx],
                                         cohort.masks[val_idx], split="val")
            reports[(kind, seed)] = report
            subset_tables[(kind, seed)] = {
                key: [_subset_means(task_logits, cohort, s, pos_of, key) for s in subsets]
                for key in ("ba", "ece")
            }
            runs.append({
                "loss": kind, "seed": int(seed),
                "ba": [h.ba for h in report.horizons],
                "ece": [h.ece for h in report.horizons],
                "mean_ba": report.mean("ba"), "mean_ece": report.mean("ece"),
            })

    aggregates = {}
    for kind in loss_kinds:
        per_seed_ba = np.array([[h.ba for h in reports[(kind, s)].horizons] for s in seeds],
                               dtype=np.float64)
        per_seed_ece = np.array([[h.ece for h in reports[(kind, s)].horizons] for s in seeds],
                                dtype=np.float64)
        stderr = lambda m: (m.std(axis=0, ddof=1) / math.sqrt(len(seeds))).tolist()
        aggregates[kind] = {
            "ba_mean": per_seed_ba.mean(axis=0).tolist(),
            "ba_stderr": stderr(per_seed_ba),
            "ece_mean": per_seed_ece.mean(axis=0).tolist(),
            "ece_stderr": stderr(per_seed_ece),
        }

    pairwise = {}
    for i, a in enumerate(loss_kinds):
        for b in loss_kinds[i + 1:]:
            entry = {}
            for key in ("ba", "ece"):
                a_vals = np.mean([subset_tables[(a, s)][key] for s in seeds], axis=0)
                b_vals = np.mean([subset_tables[(b, s)][key] for s in seeds], axis=0)
                res = metrics.wilcoxon_signed_rank(a_vals, b_vals)
                entry[key] = {"p_value": res.p_value, "n": res.n_nonzero,
                              "method": res.method}
            pairwise[f"{a}|{b}"] = entry

    comparison = Comparison(runs=runs, aggregates=aggregates, pairwise=pairwise,
                            n_subsets=len(subsets))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.json", "w") as f:
            json.dump(comparison.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
        with open(out / "comparison.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["loss", "seed", "mean_ba", "mean_ece"])
            for row in runs:
                writer.writerow([row["loss"], row["seed"],
                                 repr(row["mean_ba"]), repr(row["mean_ece"])])
    return comparison


# ---------------------------------------------------------------------------
# Attention export
# ---------------------------------------------------------------------------

def export_attention(checkpoint_path, dataset_path, subject, horizon: int,
                     out_dir, cohort: Cohort = None) -> dict:
    """Write the clinical-variable attention row (CSV) and the image-token
    attention heatmap (exact CSV + patch-grid PGM) for one subject/horizon."""
    ckpt = load_checkpoint(checkpoint_path)
    run_cfg = RunConfig.from_dict({**ckpt.config, "model": {}})
    model_cfg = ClimatConfig(**ckpt.config["model"])
    if cohort is None:
        cohort = load_cohort(dataset_path if dataset_path else run_cfg.dataset)
    if not 0 <= horizon <= model_cfg.horizons:
        raise ValueError(f"horizon {horizon} out of range [0, {model_cfg.horizons}]")
    if isinstance(subject, str):
        index = cohort.ids.index(subject)
    else:
        index = int(subject)

    dtype = run_cfg.dtype
    params = {k: Tensor(v.astype(dtype)) for k, v in ckpt.params.items()}
    train_idx, _ = split_subjects(cohort.ids)
    ranges = numeric_ranges(cohort, train_idx)
    sel = np.asarray([index], dtype=np.intp)
    clin = encode_clinical(cohort, ranges, sel)
    with frozen(list(params.values())):
        out = climat_forward(cohort.images[sel], clin, params, model_cfg,
                             want_attention=True)

    # clinical: CLS row of block C over the M variable columns, renormalized
    attn_c = nn.extract_attention(out.attention["C"])[0]
    clin_row = attn_c[0, 1:]
    clin_row = clin_row / clin_row.sum()

    # imaging: the horizon's CLS row of block P over the N patch columns
    attn_p = nn.extract_attention(out.attention["P"])[0]
    k = model_cfg.cls_tokens
    row_idx = min(horizon, k - 1)
    img_row = attn_p[row_idx, k + 1:]
    img_row = img_row / img_row.sum()
    grid = int(math.isqrt(model_cfg.n_patches))
    heat = img_row.reshape(grid, grid)

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    paths = {
        "clinical_csv": out_path / "attn_clinical.csv",
        "image_csv": out_path / "attn_image.csv",
        "image_pgm": out_path / "attn_image.pgm",
    }
    var_names = [v.name for v in cohort.config.variables]
    with open(paths["clinical_csv"], "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(var_names)
        writer.writerow([repr(float(x)) for x in clin_row])
    with open(paths["image_csv"], "w", newline="") as f:
        writer = csv.writer(f)
        for row in heat:
            writer.writerow([repr(float(x)) for x in row])
    upscaled = np.repeat(np.repeat(heat, model_cfg.patch, axis=0), model_cfg.patch, axis=1)
    synthetic.write_pgm(paths["image_pgm"], np.rint(upscaled * 255.0).astype(np.uint8))
    return {"paths": {k: str(v) for k, v in paths.items()},
            "clinical": clin_row, "image": heat}
