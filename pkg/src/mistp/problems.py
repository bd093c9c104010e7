"""Finite-sum objectives and their minibatch estimator.

A problem is a finite sum f(x) = (1/n) * sum_i f_i(x) over n component
functions on R^d.  Optimizers only ever see component evaluations (and,
for the gradient baseline, component gradients), either one index at a
time or averaged over a minibatch of indices.

Summation convention: minibatch and full averages accumulate component
values in ascending index order, left to right (`np.cumsum` has exactly
these sequential semantics).  This makes every run bit-reproducible for
a given seed and makes the full-batch minibatch value identical, bit for
bit, to the full objective value.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .exceptions import (
    InvalidLabelError,
    InvalidMinibatchError,
    ShapeError,
    UnsupportedMethodError,
)

Array = np.ndarray


def _ltr_mean(values: Array) -> float:
    """Mean of a 1-D array accumulated strictly left to right."""
    return float(np.cumsum(values)[-1]) / values.shape[0]


def _as_point(x, d: int) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ShapeError(f"expected a point of dimension {d}, got shape {x.shape}")
    return x


class FiniteSumProblem:
    """Finite sum of ``n`` component functions over R^d.

    Either pass callables (``component_eval(i, x) -> float`` and optionally
    ``exact_gradient(i, x) -> array``) or subclass and override
    :meth:`component_value` / :meth:`batch_value` with vectorized kernels.
    ``lipschitz`` is an optional per-component bound on the gradient's
    Lipschitz constant.
    """

    def __init__(
        self,
        n: int,
        d: int,
        component_eval: Optional[Callable[[int, Array], float]] = None,
        exact_gradient: Optional[Callable[[int, Array], Array]] = None,
        lipschitz: Optional[Sequence[float]] = None,
    ):
        if n < 1 or d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        self.n = int(n)
        self.d = int(d)
        self._component_eval = component_eval
        self._exact_gradient = exact_gradient
        self._lipschitz = None if lipschitz is None else np.asarray(lipschitz, dtype=float)
        if self._lipschitz is not None and self._lipschitz.shape != (self.n,):
            raise ShapeError(f"lipschitz must have length n={n}")

    # -- single component ------------------------------------------------

    def component_value(self, i: int, x: Array) -> float:
        if self._component_eval is None:
            raise NotImplementedError("component_value must be overridden")
        return float(self._component_eval(i, np.asarray(x, dtype=float)))

    def component_grad(self, i: int, x: Array) -> Array:
        if self._exact_gradient is None:
            raise UnsupportedMethodError(
                f"{type(self).__name__} does not provide exact gradients"
            )
        return np.asarray(self._exact_gradient(i, np.asarray(x, dtype=float)), dtype=float)

    @property
    def has_gradient(self) -> bool:
        return self._exact_gradient is not None

    # -- batched evaluation ----------------------------------------------

    def batch_value(self, indices: Array, x: Array) -> float:
        """Mean of f_i(x) over ``indices`` in the fixed summation order.

        Indices are assumed valid (see :func:`eval_minibatch` for the
        validated entry point); repeated indices are allowed so the
        with-replacement sampling variant works unchanged.
        """
        vals = np.array([self.component_value(int(i), x) for i in indices], dtype=float)
        return _ltr_mean(vals)

    def batch_grad(self, indices: Array, x: Array) -> Array:
        grads = [self.component_grad(int(i), x) for i in indices]
        return np.mean(grads, axis=0)

    def full_value(self, x: Array) -> float:
        return self.batch_value(np.arange(self.n), x)

    def full_grad(self, x: Array) -> Array:
        return self.batch_grad(np.arange(self.n), x)

    # -- smoothness metadata ----------------------------------------------

    def lipschitz_constants(self) -> Array:
        if self._lipschitz is None:
            raise UnsupportedMethodError(
                f"{type(self).__name__} has no per-component Lipschitz constants"
            )
        return self._lipschitz

    def mean_lipschitz(self) -> float:
        return float(np.mean(self.lipschitz_constants()))


def validate_minibatch(indices, n: int, allow_repeats: bool = False) -> Array:
    """Check minibatch indices: integer, in [0, n), distinct, 1 <= size <= n."""
    idx = np.asarray(indices)
    if idx.ndim != 1 or idx.size < 1:
        raise InvalidMinibatchError("minibatch must be a non-empty 1-D index sequence")
    if not np.issubdtype(idx.dtype, np.integer):
        raise InvalidMinibatchError("minibatch indices must be integers")
    if idx.min() < 0 or idx.max() >= n:
        raise InvalidMinibatchError(f"minibatch indices must lie in [0, {n})")
    if not allow_repeats:
        if idx.size > n:
            raise InvalidMinibatchError(f"minibatch size {idx.size} exceeds n={n}")
        if np.unique(idx).size != idx.size:
            raise InvalidMinibatchError("minibatch indices must be distinct")
    return idx


def eval_minibatch(problem: FiniteSumProblem, indices, x) -> float:
    """Minibatch estimate: the arithmetic mean of f_i(x) for i in the batch.

    Equals the full objective exactly when the batch is all of [0, n).
    """
    idx = validate_minibatch(indices, problem.n)
    x = _as_point(x, problem.d)
    return problem.batch_value(idx, x)


def lipschitz_constants(problem: FiniteSumProblem) -> tuple[Array, float]:
    """Per-component gradient-Lipschitz constants and their mean."""
    ls = problem.lipschitz_constants()
    return ls, float(np.mean(ls))


class RidgeProblem(FiniteSumProblem):
    """Ridge regression as a finite sum.

    f_i(x) = 0.5 * (a_i . x - y_i)^2 + (lam / 2) * ||x||^2, so the mean
    over all i is the usual least-squares-plus-ridge objective.  The
    regularizer sits inside every component so minibatch means stay
    unbiased estimates of the full objective.
    """

    def __init__(self, A, y, lam: float):
        A = np.ascontiguousarray(A, dtype=float)
        y = np.asarray(y, dtype=float)
        if A.ndim != 2:
            raise ShapeError("A must be a 2-D matrix")
        if y.shape != (A.shape[0],):
            raise ShapeError("y must have one entry per row of A")
        if lam <= 0:
            raise ValueError("lam must be positive")
        super().__init__(A.shape[0], A.shape[1])
        self.A = A
        self.y = y
        self.lam = float(lam)
        self._row_sq = np.einsum("ij,ij->i", A, A)

    def _residuals(self, indices: Array, x: Array) -> Array:
        return self.A[indices] @ x - self.y[indices]

    def component_value(self, i: int, x: Array) -> float:
        r = float(self.A[i] @ x - self.y[i])
        return 0.5 * r * r + 0.5 * self.lam * float(x @ x)

    def component_grad(self, i: int, x: Array) -> Array:
        r = float(self.A[i] @ x - self.y[i])
        return r * self.A[i] + self.lam * x

    def value_grad(self, i: int, x) -> tuple[float, Array]:
        x = _as_point(x, self.d)
        return self.component_value(i, x), self.component_grad(i, x)

    @property
    def has_gradient(self) -> bool:
        return True

    def batch_value(self, indices: Array, x: Array) -> float:
        r = self._residuals(indices, x)
        reg = 0.5 * self.lam * float(x @ x)
        return _ltr_mean(0.5 * r * r + reg)

    def batch_grad(self, indices: Array, x: Array) -> Array:
        r = self._residuals(indices, x)
        return (self.A[indices].T @ r) / indices.shape[0] + self.lam * x

    def lipschitz_constants(self) -> Array:
        # Hessian of f_i is a_i a_i^T + lam I, spectral norm ||a_i||^2 + lam.
        return self._row_sq + self.lam

    def solve_normal_equations(self) -> Array:
        """Closed-form minimizer from (A^T A / n + lam I) x = A^T y / n."""
        lhs = self.A.T @ self.A / self.n + self.lam * np.eye(self.d)
        return np.linalg.solve(lhs, self.A.T @ self.y / self.n)

    def optimal_value(self) -> float:
        return self.full_value(self.solve_normal_equations())


class LogisticProblem(FiniteSumProblem):
    """L2-regularized logistic regression as a finite sum.

    f_i(x) = 0.5 * ln(1 + exp(-y_i * a_i . x)) + (lam / 2) * ||x||^2 with
    labels in {-1, +1}.  The 0.5 factor on the loss keeps the mean over
    components equal to the 1/(2n)-scaled objective this problem is
    conventionally written with.  The first feature must be the constant 1
    (intercept column); see :func:`mistp.datasets.add_intercept`.

    The log-term is evaluated as logaddexp(0, -t), i.e. log1p(exp(-t)) for
    t >= 0 and -t + log1p(exp(t)) otherwise, so margins up to |t| ~ 1e4
    neither overflow nor lose the tail.
    """

    def __init__(self, A, y, lam: float):
        A = np.ascontiguousarray(A, dtype=float)
        y = np.asarray(y, dtype=float)
        if A.ndim != 2:
            raise ShapeError("A must be a 2-D matrix")
        if y.shape != (A.shape[0],):
            raise ShapeError("y must have one entry per row of A")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise InvalidLabelError("labels must be -1 or +1")
        if not np.allclose(A[:, 0], 1.0, rtol=0, atol=0):
            raise ValueError("first column of A must be all ones (intercept)")
        if lam <= 0:
            raise ValueError("lam must be positive")
        super().__init__(A.shape[0], A.shape[1])
        self.A = A
        self.y = y
        self.lam = float(lam)
        self._row_sq = np.einsum("ij,ij->i", A, A)

    def _margins(self, indices: Array, x: Array) -> Array:
        return self.y[indices] * (self.A[indices] @ x)

    def component_value(self, i: int, x: Array) -> float:
        t = float(self.y[i] * (self.A[i] @ x))
        return 0.5 * float(np.logaddexp(0.0, -t)) + 0.5 * self.lam * float(x @ x)

    def component_grad(self, i: int, x: Array) -> Array:
        t = float(self.y[i] * (self.A[i] @ x))
        return -0.5 * float(expit(-t)) * self.y[i] * self.A[i] + self.lam * x

    def value_grad(self, i: int, x) -> tuple[float, Array]:
        x = _as_point(x, self.d)
        return self.component_value(i, x), self.component_grad(i, x)

    @property
    def has_gradient(self) -> bool:
        return True

    def batch_value(self, indices: Array, x: Array) -> float:
        t = self._margins(indices, x)
        reg = 0.5 * self.lam * float(x @ x)
        return _ltr_mean(0.5 * np.logaddexp(0.0, -t) + reg)

    def batch_grad(self, indices: Array, x: Array) -> Array:
        t = self._margins(indices, x)
        coef = -0.5 * expit(-t) * self.y[indices]
        return (self.A[indices].T @ coef) / indices.shape[0] + self.lam * x

    def lipschitz_constants(self) -> Array:
        # Second derivative of 0.5*ln(1+exp(-t)) peaks at 1/8.
        return self._row_sq / 8.0 + self.lam


class MlpProblem(FiniteSumProblem):
    """Small fully-connected classifier trained by function values only.

    ``layer_sizes`` lists (input, hidden..., classes); each affine layer
    except the last is followed by ReLU, the last by softmax, and the
    per-sample loss is categorical cross-entropy against one-hot labels.
    The loss is computed in log-space (logsumexp minus the true-class
    logit) so it stays finite for any finite parameter vector.

    Parameter layout of the flat vector x: layer by layer, each layer's
    weight matrix W (shape in_size x out_size, row-major / C order) followed
    by its bias (out_size,).  There is no exact gradient: this problem is
    forward-only by design.
    """

    def __init__(self, layer_sizes: Sequence[int], samples, labels_onehot):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("layer_sizes needs at least (input, classes), all >= 1")
        samples = np.ascontiguousarray(samples, dtype=float)
        labels = np.ascontiguousarray(labels_onehot, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != sizes[0]:
            raise ShapeError(f"samples must be (n, {sizes[0]})")
        if labels.shape != (samples.shape[0], sizes[-1]):
            raise ShapeError(f"labels must be (n, {sizes[-1]}) one-hot")
        d = sum(sizes[k] * sizes[k + 1] + sizes[k + 1] for k in range(len(sizes) - 1))
        super().__init__(samples.shape[0], d)
        self.layer_sizes = tuple(sizes)
        self.samples = samples
        self.labels = labels
        self._class_index = np.argmax(labels, axis=1)

    def unpack(self, x: Array) -> list[tuple[Array, Array]]:
        """Views of (W, b) per layer from the flat parameter vector."""
        x = _as_point(x, self.d)
        out, offset = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = x[offset : offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = x[offset : offset + n_out]
            offset += n_out
            out.append((w, b))
        return out

    def _logits(self, indices: Array, x: Array) -> Array:
        h = self.samples[indices]
        layers = self.unpack(x)
        for w, b in layers[:-1]:
            h = np.maximum(h @ w + b, 0.0)
        w, b = layers[-1]
        return h @ w + b

    def predict_proba(self, indices, x) -> Array:
        """Softmax class probabilities for the given sample indices."""
        z = self._logits(np.asarray(indices, dtype=int), np.asarray(x, dtype=float))
        return np.exp(z - logsumexp(z, axis=1, keepdims=True))

    def component_value(self, i: int, x: Array) -> float:
        return self.batch_value(np.array([i]), np.asarray(x, dtype=float))

    def batch_value(self, indices: Array, x: Array) -> float:
        z = self._logits(indices, x)
        losses = logsumexp(z, axis=1) - z[np.arange(len(indices)), self._class_index[indices]]
        return _ltr_mean(losses)
