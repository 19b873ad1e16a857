"""Per-point losses and their gradients for the two supported model families.

``linear_regression`` has no intercept: ``l(w; x, y) = (<x, w> - y)^2``.
``multinomial_logistic`` stores a ``(C, d_in)`` weight matrix flattened row
major, and ``l`` is the softmax cross-entropy.  Batch quantities are means,
never sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ContractViolation, Shard

LINEAR_REGRESSION = "linear_regression"
MULTINOMIAL_LOGISTIC = "multinomial_logistic"


@dataclass(frozen=True)
class LossModel:
    kind: str
    d_in: int
    d_out: int = 1

    def __post_init__(self):
        if self.kind not in (LINEAR_REGRESSION, MULTINOMIAL_LOGISTIC):
            raise ContractViolation(f"unknown model kind {self.kind!r}")
        if self.kind == LINEAR_REGRESSION and self.d_out != 1:
            raise ContractViolation("linear regression has a scalar output")
        if self.kind == MULTINOMIAL_LOGISTIC and self.d_out < 2:
            raise ContractViolation("multinomial logistic needs at least 2 classes")

    @property
    def dim(self) -> int:
        return self.d_in * self.d_out

    @property
    def is_quadratic(self) -> bool:
        return self.kind == LINEAR_REGRESSION

    def weights(self, w: np.ndarray) -> np.ndarray:
        if w.shape[-1] != self.dim:
            raise ContractViolation(f"parameter dimension {w.shape[-1]} does not match model dimension {self.dim}")
        if self.kind == LINEAR_REGRESSION:
            return w
        return w.reshape(*w.shape[:-1], self.d_out, self.d_in)

    def _check_x(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.d_in:
            raise ContractViolation(f"feature dimension {x.shape[-1]} does not match model input {self.d_in}")

    def losses(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Loss of every point in ``(x, y)`` under a single model ``w``."""
        self._check_x(x)
        W = self.weights(w)
        if self.kind == LINEAR_REGRESSION:
            r = x @ W - y
            return r * r
        logits = x @ W.T
        return logsumexp(logits, axis=1) - logits[np.arange(len(y)), y]

    def losses_per_center(self, centers: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``(n, S)`` matrix of point losses under each of the ``S`` centers."""
        self._check_x(x)
        if self.kind == LINEAR_REGRESSION:
            r = x @ centers.T - y[:, None]
            return r * r
        W = self.weights(centers)  # (S, C, d_in)
        logits = np.einsum("nd,scd->nsc", x, W)
        picked = logits[np.arange(len(y)), :, y]
        return logsumexp(logits, axis=2) - picked

    def gradients(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``(n, dim)`` matrix of per-point gradients."""
        self._check_x(x)
        W = self.weights(w)
        if self.kind == LINEAR_REGRESSION:
            return (2.0 * (x @ W - y))[:, None] * x
        logits = x @ W.T
        p = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        p[np.arange(len(y)), y] -= 1.0
        return (p[:, :, None] * x[:, None, :]).reshape(len(y), -1)

    def mean_gradient(self, w: np.ndarray, x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Mean (or ``weights``-weighted mean) gradient without materializing per-point rows."""
        self._check_x(x)
        n = len(y)
        W = self.weights(w)
        if self.kind == LINEAR_REGRESSION:
            r = 2.0 * (x @ W - y)
            if weights is not None:
                r = r * weights
            return x.T @ r / n
        logits = x @ W.T
        p = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        p[np.arange(n), y] -= 1.0
        if weights is not None:
            p = p * weights[:, None]
        return (p.T @ x).ravel() / n

    def predict_class(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.kind != MULTINOMIAL_LOGISTIC:
            raise ContractViolation("class prediction needs a classification model")
        return np.argmax(x @ self.weights(w).T, axis=1)


def _point_arrays(p) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(p.x, dtype=np.float64)[None, :]
    y = np.asarray([p.y])
    return x, y


def point_loss(model: LossModel, w: np.ndarray, p) -> float:
    """Loss of a single point ``p`` (anything with ``.x`` and ``.y``)."""
    x, y = _point_arrays(p)
    return float(model.losses(w, x, y)[0])


def point_gradient(model: LossModel, w: np.ndarray, p) -> np.ndarray:
    x, y = _point_arrays(p)
    return model.gradients(w, x, y)[0]


def _require_points(points: Shard) -> None:
    if len(points) == 0:
        raise ContractViolation("batch risk needs at least one point")


def batch_risk(model: LossModel, w: np.ndarray, points: Shard) -> float:
    _require_points(points)
    return float(np.mean(model.losses(w, points.x, points.y)))


def batch_gradient(model: LossModel, w: np.ndarray, points: Shard) -> np.ndarray:
    _require_points(points)
    return model.mean_gradient(w, points.x, points.y)


def model_for(dataset) -> LossModel:
    """The loss model matching a generated federation."""
    if dataset.is_classification:
        return LossModel(MULTINOMIAL_LOGISTIC, dataset.d_in, int(dataset.generator_spec["class_count"]))
    return LossModel(LINEAR_REGRESSION, dataset.d_in)
