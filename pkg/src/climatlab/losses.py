"""Loss calculus for calibrated multi-task trajectory forecasting.

The centerpiece is the CLUB loss, tau*CE + (1-tau)*log(n_classes): an upper
bound on temperature-scaled cross-entropy for tau in (0, 1], affine in tau
with slope CE - log(n_classes). The per-task inverse temperatures tau_t come
from unconstrained noise parameters sigma_t through a softmax-plus-max-rescale
constraint that pins max_t tau_t to exactly 1.

Plain-array entry points (cross_entropy/tce/club/constrain_tau) serve tests
and sweeps; the *_rows builders assemble the same math as autodiff graphs for
training. Both share one formulation: the stable log-sum-exp form.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


# ---------------------------------------------------------------------------
# Plain-array forms
# ---------------------------------------------------------------------------

def _lse(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return np.log(np.exp(logits - m).sum(axis=-1)) + m[..., 0]


def _check_classes(logits, true_class):
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(true_class)
    n_c = logits.shape[-1]
    if np.any(classes < 0) or np.any(classes >= n_c):
        raise ValueError(f"class index out of range [0, {n_c})")
    return logits, classes, n_c


def cross_entropy(logits, true_class):
    """-log softmax(logits)[true_class] via stable log-sum-exp.

    Accepts one instance (1D logits, int class) or a batch (2D logits, int
    vector); returns a float or a float vector accordingly.
    """
    logits, classes, _ = _check_classes(logits, true_class)
    picked = np.take_along_axis(
        logits, np.expand_dims(classes, -1).astype(np.intp), axis=-1
    )[..., 0]
    out = _lse(logits) - picked
    return float(out) if out.ndim == 0 else out


def tce(logits, true_class, tau):
    """Temperature-scaled cross-entropy: CE evaluated on tau * logits."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0.0):
        raise ValueError("tce requires tau > 0")
    logits, _, _ = _check_classes(logits, true_class)
    return cross_entropy(logits * np.expand_dims(tau, -1), true_class)


def club(logits, true_class, tau, n_classes=None):
    """tau * CE + (1 - tau) * log(n_classes), tau in (0, 1]."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0.0) or np.any(tau > 1.0):
        raise ValueError("club requires tau in (0, 1]")
    logits = np.asarray(logits, dtype=np.float64)
    n_c = logits.shape[-1] if n_classes is None else n_classes
    return tau * cross_entropy(logits, true_class) + (1.0 - tau) * math.log(n_c)


def constrain_tau(sigma, eps=0.1):
    """Plain-array view of the tau constraint (see constrain_tau_t)."""
    return constrain_tau_t(Tensor(np.asarray(sigma, dtype=np.float64)), eps).data


# ---------------------------------------------------------------------------
# Autodiff builders
# ---------------------------------------------------------------------------

def constrain_tau_t(sigma: Tensor, eps: float = 0.1) -> Tensor:
    """Map unconstrained noise parameters to inverse temperatures:
    rho_t = 1/(sigma_t^2 + eps); tau = softmax(rho) / max(softmax(rho)).

    Total for eps > 0; differentiable almost everywhere; max_t tau_t is
    exactly 1 and every tau_t lies in (0, 1].
    """
    if eps <= 0.0:
        raise ValueError("constrain_tau requires eps > 0")
    rho = 1.0 / (sigma * sigma + eps)
    weights = ad.softmax(rho, axis=-1)
    return weights / weights.max(axis=-1, keepdims=True)


def _onehot_rows(labels: np.ndarray, n_classes: int, dtype) -> np.ndarray:
    hot = np.zeros((labels.shape[0], n_classes), dtype=dtype)
    hot[np.arange(labels.shape[0]), labels.astype(np.intp)] = 1.0
    return hot


def ce_rows(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample cross-entropy, (batch,) from (batch, n_classes) logits."""
    n_c = logits.data.shape[-1]
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= n_c):
        raise ValueError(f"class index out of range [0, {n_c})")
    hot = _onehot_rows(labels, n_c, logits.data.dtype)
    picked = (logits * Tensor(hot)).sum(axis=-1)
    return ad.logsumexp(logits, axis=-1) - picked


def tce_rows(logits: Tensor, labels: np.ndarray, tau) -> Tensor:
    """Per-sample temperature-scaled CE; tau may be a trainable scalar Tensor."""
    return ce_rows(logits * tau, labels)


def club_rows(logits: Tensor, labels: np.ndarray, tau, n_classes=None) -> Tensor:
    """Per-sample CLUB loss; tau may be a trainable scalar Tensor."""
    n_c = logits.data.shape[-1] if n_classes is None else n_classes
    return tau * ce_rows(logits, labels) + (1.0 - ad.as_tensor(tau)) * math.log(n_c)


def focal_rows(logits: Tensor, labels: np.ndarray, gamma: float = 2.0) -> Tensor:
    """Per-sample focal loss -(1 - p_c)^gamma * log p_c (stable log p_c)."""
    log_p = -ce_rows(logits, labels)
    weight = ad.pow_const(1.0 - ad.exp(log_p), gamma)
    return -(weight * log_p)


def mtl_rows(logits: Tensor, labels: np.ndarray, s_task: Tensor) -> Tensor:
    """Per-sample uncertainty-weighted term exp(-s)*CE + s/2 for one task;
    s_task is that task's trainable log-variance scalar."""
    return ad.exp(-s_task) * ce_rows(logits, labels) + 0.5 * s_task


def baseline_losses(logits, label, kind, hyper=None):
    """Single-instance baseline losses for comparison runs.

    kind="focal": logits is one task's logit vector, hyper={"gamma": g}.
    kind="mtl": logits is a per-task list of logit vectors, label a list,
    hyper={"s": per-task log-variances}; terms are summed over tasks.
    """
    hyper = hyper or {}
    if kind == "focal":
        gamma = float(hyper.get("gamma", 2.0))
        log_p = -cross_entropy(logits, label)
        return float(-((1.0 - math.exp(log_p)) ** gamma) * log_p)
    if kind == "mtl":
        s = np.asarray(hyper["s"], dtype=np.float64)
        if len(s) != len(logits):
            raise ValueError("mtl needs one log-variance per task")
        total = 0.0
        for t, (f_t, y_t) in enumerate(zip(logits, label)):
            total += math.exp(-s[t]) * cross_entropy(f_t, y_t) + 0.5 * s[t]
        return total
    raise ValueError(f"unknown baseline loss kind: {kind!r}")


# ---------------------------------------------------------------------------
# Masked multi-task objective
# ---------------------------------------------------------------------------

@dataclass
class TaskBatch:
    """One batch of per-task logits with labels and availability masks.

    logits: per task t, a (batch, n_classes_t) Tensor (or ndarray, wrapped on
    use). labels/masks: (batch, n_tasks) integer arrays; masked entries may
    hold arbitrary label placeholders. diag_logits optionally carries the
    imaging block's diagnosis logits for the consistency term.
    """

    logits: list
    labels: np.ndarray
    masks: np.ndarray
    diag_logits: object = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        self.masks = np.asarray(self.masks)
        if self.labels.shape != self.masks.shape:
            raise ShapeError("labels and masks must share shape (batch, n_tasks)")
        if len(self.logits) != self.labels.shape[1]:
            raise ShapeError("need one logits block per task")

    @property
    def n_tasks(self) -> int:
        return len(self.logits)


def masked_task_loss(batch: TaskBatch, per_task_rows) -> Tensor:
    """Per-sample (sum_t mask*term_t) / (sum_t mask), then mean over batch.

    per_task_rows(t, logits_t, safe_labels_t) -> (batch,) Tensor. Masked
    labels are replaced by 0 before evaluation, so placeholder values can
    never influence the result (bitwise).
    """
    masks = batch.masks.astype(np.float64)
    denom = masks.sum(axis=1)
    if np.any(denom == 0):
        raise ValueError("batch element with all tasks masked (0/0); filter it out")
    columns = []
    for t in range(batch.n_tasks):
        safe = np.where(batch.masks[:, t] != 0, batch.labels[:, t], 0)
        rows = per_task_rows(t, ad.as_tensor(batch.logits[t]), safe)
        columns.append(rows[:, None] if rows.data.ndim == 1 else rows)
    stacked = ad.concat(columns, axis=1)
    per_sample = (stacked * Tensor(masks.astype(stacked.data.dtype))).sum(axis=1)
    return (per_sample / Tensor(denom.astype(stacked.data.dtype))).mean()


def prognosis_loss(batch: TaskBatch, tau) -> Tensor:
    """Masked CLUB objective over all tasks; tau is the (n_tasks,) inverse-
    temperature vector (Tensor for training, array otherwise)."""
    tau = ad.as_tensor(tau)
    return masked_task_loss(
        batch, lambda t, lg, y: club_rows(lg, y, tau[t:t + 1])
    )


def consistency_loss(diag_logits, traj_logits) -> Tensor:
    """L1 gap between the two diagnosis logit vectors, summed over classes
    and averaged over the batch."""
    a, b = ad.as_tensor(diag_logits), ad.as_tensor(traj_logits)
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"consistency operands must match: {a.data.shape} vs {b.data.shape}"
        )
    return ad.absolute(a - b).sum(axis=-1).mean()


def total_loss(batch: TaskBatch, tau, lam: float) -> Tensor:
    """prognosis + lambda * consistency. lambda = 0 short-circuits the
    consistency term so it contributes exactly zero gradient."""
    if lam < 0:
        raise ValueError("consistency coefficient must be >= 0")
    prog = prognosis_loss(batch, tau)
    if lam == 0:
        return prog
    if batch.diag_logits is None:
        raise ValueError("consistency term needs diag_logits on the batch")
    return prog + lam * consistency_loss(batch.diag_logits, batch.logits[0])


# ---------------------------------------------------------------------------
# Gradient identity check
# ---------------------------------------------------------------------------

def club_grad_identities(logits: np.ndarray, true_class: int, tau: float) -> float:
    """Verify via autodiff, with tau a free leaf, that
    d club/d theta = tau * d ce/d theta and d club/d tau = ce - log(n_classes).
    Returns the max absolute deviation across both identities."""
    n_c = len(logits)
    theta = Tensor(np.asarray(logits, dtype=np.float64), requires_grad=True)
    tau_t = Tensor(float(tau), requires_grad=True)
    loss = club_rows(theta[None, :], np.array([true_class]), tau_t).sum()
    ad.backward(loss)
    club_dtheta = theta.grad.copy()
    club_dtau = float(tau_t.grad)

    theta2 = Tensor(np.asarray(logits, dtype=np.float64), requires_grad=True)
    ce = ce_rows(theta2[None, :], np.array([true_class])).sum()
    ad.backward(ce)

    dev_theta = np.max(np.abs(club_dtheta - tau * theta2.grad))
    dev_tau = abs(club_dtau - (float(ce.data) - math.log(n_c)))
    return float(max(dev_theta, dev_tau))
