"""Training objectives.

All expectations are reduced with a per-example mean.  Probabilities fed
to logarithms are floored at :data:`LOG_FLOOR`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import ShapeError, Tensor, ops

LOG_FLOOR = 1e-12


def _one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got {labels.min()}..{labels.max()}")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _as_probs(name: str, p: Tensor) -> Tensor:
    if p.ndim == 2 and p.shape[1] == 1:
        p = ops.reshape(p, (p.shape[0],))
    if p.ndim != 1 or p.shape[0] == 0:
        raise ShapeError(f"{name}: expected a non-empty vector of probabilities, got shape {p.shape}")
    v = p.values
    if np.any(v <= 0.0) or np.any(v >= 1.0):
        raise ValueError(f"{name}: probabilities must lie strictly inside (0, 1)")
    return p


def source_ce(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of ``logits`` [B, K] against integer ``labels``."""
    if logits.ndim != 2:
        raise ShapeError(f"source_ce: logits must be [B, K], got {logits.shape}")
    onehot = _one_hot(labels, logits.shape[1])
    if onehot.shape[0] != logits.shape[0]:
        raise ShapeError(f"source_ce: {logits.shape[0]} logit rows vs {onehot.shape[0]} labels")
    picked = ops.sum(ops.mul(ops.log_softmax(logits, axis=1), Tensor(onehot)))
    return ops.scale(picked, -1.0 / logits.shape[0])


def kd_loss(teacher_logits: Tensor, student_logits: Tensor, t: float) -> Tensor:
    """Temperature-softened distillation loss, scaled by ``t**2``.

    The teacher is detached: gradients reach the student logits only.
    """
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    if teacher_logits.shape != student_logits.shape or student_logits.ndim != 2:
        raise ShapeError(
            f"kd_loss: teacher {teacher_logits.shape} and student {student_logits.shape} must be equal [B, K]")
    soft_teacher = ops.softmax(ops.scale(teacher_logits.detach(), 1.0 / t), axis=1).detach()
    log_student = ops.log_softmax(ops.scale(student_logits, 1.0 / t), axis=1)
    cross = ops.sum(ops.mul(log_student, soft_teacher))
    return ops.scale(cross, -(t * t) / student_logits.shape[0])


def dis_loss(d_on_source: Tensor, d_on_target: Tensor) -> Tensor:
    """Discriminator loss with source labelled 1 and target labelled 0."""
    ps = _as_probs("dis_loss", d_on_source)
    pt = _as_probs("dis_loss", d_on_target)
    src = ops.mean(ops.log(ps, floor=LOG_FLOOR))
    tgt = ops.mean(ops.log(1.0 - pt, floor=LOG_FLOOR))
    return ops.scale(ops.add(src, tgt), -1.0)


def gen_loss(d_on_target: Tensor) -> Tensor:
    """Target-encoder adversarial loss with inverted labels."""
    pt = _as_probs("gen_loss", d_on_target)
    return ops.scale(ops.mean(ops.log(pt, floor=LOG_FLOOR)), -1.0)


def target_objective(gen: Tensor, kd: Tensor) -> Tensor:
    return ops.add(gen, kd)


def target_objective_supervised(gen: Tensor, source_logits_via_target: Tensor, labels) -> Tensor:
    """Adversarial loss plus cross-entropy on source labels through the target encoder."""
    return ops.add(gen, source_ce(source_logits_via_target, labels))


def _sq_dists(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows, [n, m]."""
    na = ops.reshape(ops.sum(ops.mul(a, a), axis=1), (a.shape[0], 1))
    nb = ops.reshape(ops.sum(ops.mul(b, b), axis=1), (1, b.shape[0]))
    ones_m = Tensor(np.ones((1, b.shape[0])))
    ones_n = Tensor(np.ones((a.shape[0], 1)))
    cross = ops.matmul(a, ops.transpose(b))
    return ops.sub(ops.add(ops.matmul(na, ones_m), ops.matmul(ones_n, nb)), ops.scale(cross, 2.0))


def median_bandwidth(source_reps: Tensor, target_reps: Tensor) -> float:
    """Median pairwise squared distance of the pooled batch, used as sigma**2."""
    z = np.concatenate([source_reps.values, target_reps.values], axis=0)
    sq = (z * z).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * z @ z.T
    iu = np.triu_indices(z.shape[0], k=1)
    med = float(np.median(np.maximum(d2[iu], 0.0))) if iu[0].size else 0.0
    return med if med > 0 else 1.0


def mmd_gaussian(source_reps: Tensor, target_reps: Tensor,
                 bandwidths: Sequence[float] | None = None) -> Tensor:
    """Biased MMD**2 estimate with a sum of Gaussian kernels exp(-d**2 / (2 sigma**2)).

    ``bandwidths`` are sigma values.  When omitted, a single kernel with
    sigma**2 set to the median pairwise squared distance is used.
    """
    for name, x in (("source", source_reps), ("target", target_reps)):
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError(f"mmd_gaussian: {name} batch must be non-empty [B, h], got {x.shape}")
    if source_reps.shape[1] != target_reps.shape[1]:
        raise ShapeError(f"mmd_gaussian: feature sizes differ, {source_reps.shape} vs {target_reps.shape}")
    if bandwidths is None:
        sigma2s = [median_bandwidth(source_reps, target_reps)]
    else:
        sigma2s = [float(s) ** 2 for s in bandwidths]
        if not sigma2s or min(sigma2s) <= 0:
            raise ValueError("bandwidths must be a non-empty list of positive values")

    terms = []
    for a, b, sign in ((source_reps, source_reps, 1.0), (target_reps, target_reps, 1.0),
                       (source_reps, target_reps, -2.0)):
        d2 = _sq_dists(a, b)
        k = None
        for s2 in sigma2s:
            kk = ops.exp(ops.scale(d2, -1.0 / (2.0 * s2)))
            k = kk if k is None else ops.add(k, kk)
        terms.append(ops.scale(ops.mean(k), sign))
    return ops.add(ops.add(terms[0], terms[1]), terms[2])


def _covariance(x: Tensor) -> Tensor:
    n = x.shape[0]
    centering = Tensor(np.eye(n) - np.full((n, n), 1.0 / n))
    xc = ops.matmul(centering, x)
    return ops.scale(ops.matmul(ops.transpose(xc), xc), 1.0 / (n - 1))


def coral_loss(source_reps: Tensor, target_reps: Tensor) -> Tensor:
    """Squared Frobenius distance between feature covariances, divided by 4 h**2."""
    for name, x in (("source", source_reps), ("target", target_reps)):
        if x.ndim != 2 or x.shape[0] < 2:
            raise ShapeError(f"coral_loss: {name} batch needs at least 2 rows of [B, h], got {x.shape}")
    if source_reps.shape[1] != target_reps.shape[1]:
        raise ShapeError(f"coral_loss: feature sizes differ, {source_reps.shape} vs {target_reps.shape}")
    h = source_reps.shape[1]
    diff = ops.sub(_covariance(source_reps), _covariance(target_reps))
    return ops.scale(ops.sum(ops.mul(diff, diff)), 1.0 / (4.0 * h * h))


def domain_ce(d_on_source: Tensor, d_on_target: Tensor) -> Tensor:
    """Binary domain cross-entropy for the DANN domain classifier (source = 1)."""
    return dis_loss(d_on_source, d_on_target)


def dann_objective(class_loss: Tensor, domain_loss: Tensor, lam: float = 1.0) -> Tensor:
    """Sum of class and domain losses.

    Gradient reversal is applied where the representation enters the domain
    classifier (see :func:`reverse`); the sum itself is plain.  ``lam`` is
    accepted so callers validate it in one place.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return ops.add(class_loss, domain_loss)


def reverse(reps: Tensor, lam: float = 1.0) -> Tensor:
    """Gradient reversal layer: identity forward, gradient times -lam backward."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return ops.grad_reverse(reps, lam)


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())
