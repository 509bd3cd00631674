"""Margin classifier trained by sequential minimal optimization.

One binary soft-margin problem is solved per class (one-vs-rest) with a
polynomial kernel ``(x . y + 1)^degree``.  The dual is optimized by
maximal-violating-pair SMO with second-order working-set selection; at
convergence every multiplier satisfies ``0 <= alpha_i <= C`` and the largest
KKT violation is below the tolerance.  Decision scores are mapped to
probabilities by a per-class logistic (Platt) fit on the training scores,
then normalized across classes.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from ..errors import DataError, TrainingError
from .base import Classifier, SmoSpec

# Full Gram matrices are precomputed up to this many training rows; larger
# problems fall back to on-demand kernel columns with a bounded cache.
_FULL_GRAM_ROWS = 6000
_COLUMN_CACHE = 1024


def _poly_kernel(a, b, degree: int) -> np.ndarray:
    """(a . b + 1)^degree as a dense array; absent sparse entries are 0."""
    prod = a @ b.T
    if sp.issparse(prod):
        prod = prod.toarray()
    prod = np.asarray(prod, dtype=np.float64) + 1.0
    if degree != 1:
        prod **= degree
    return prod


class _Kernel:
    """Kernel columns over one training matrix, precomputed or cached."""

    def __init__(self, x, degree: int):
        self.x = x
        self.degree = degree
        self.n = x.shape[0]
        if self.n <= _FULL_GRAM_ROWS:
            self.full = _poly_kernel(x, x, degree)
            self.diag = np.diag(self.full).copy()
            self._cache = None
        else:
            self.full = None
            if sp.issparse(x):
                sq = np.asarray(x.multiply(x).sum(axis=1)).ravel()
            else:
                sq = (x * x).sum(axis=1)
            self.diag = (sq + 1.0) ** degree
            self._cache: dict[int, np.ndarray] = {}

    def col(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[:, i]
        got = self._cache.get(i)
        if got is None:
            got = _poly_kernel(self.x, self.x[i:i + 1], self.degree).ravel()
            if len(self._cache) >= _COLUMN_CACHE:
                self._cache.pop(next(iter(self._cache)))
            self._cache[i] = got
        return got

    def block(self, cols: np.ndarray) -> np.ndarray:
        """(n, len(cols)) slab of kernel values."""
        if self.full is not None:
            return self.full[:, cols]
        return _poly_kernel(self.x, self.x[cols], self.degree)


def solve_binary(kernel: _Kernel, y: np.ndarray, c: float, tol: float,
                 max_iter: int):
    """SMO on one binary problem; ``y`` holds +/-1.

    Returns (alpha, bias, kkt_gap, iterations).  The working pair is the
    maximal violating pair with a second-order choice of the second index;
    convergence means the violation gap dropped below ``tol``.
    """
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    eps = 1e-12
    pos = y > 0
    gap = np.inf
    it = 0
    while it < max_iter:
        yg = -y * grad
        up = (pos & (alpha < c - eps)) | (~pos & (alpha > eps))
        low = (~pos & (alpha < c - eps)) | (pos & (alpha > eps))
        if not up.any() or not low.any():
            gap = 0.0
            break
        up_vals = np.where(up, yg, -np.inf)
        i = int(np.argmax(up_vals))
        m_val = up_vals[i]
        low_vals = np.where(low, yg, np.inf)
        gap = m_val - low_vals.min()
        if gap < tol:
            break

        k_i = kernel.col(i)
        # Second-order selection among violators: largest decrease of the
        # dual objective for the pair (i, t).
        viol = low & (yg < m_val)
        quad_all = kernel.diag[i] + kernel.diag - 2.0 * k_i
        quad_all = np.where(quad_all > 0, quad_all, 1e-12)
        b_t = m_val - yg
        score = np.where(viol, -(b_t * b_t) / quad_all, np.inf)
        j = int(np.argmin(score))

        k_j = kernel.col(j)
        yi, yj = y[i], y[j]
        gi, gj = grad[i], grad[j]
        old_ai, old_aj = alpha[i], alpha[j]
        quad = kernel.diag[i] + kernel.diag[j] - 2.0 * k_i[j]
        if quad <= 0:
            quad = 1e-12
        if yi != yj:
            delta = (-gi - gj) / quad
            diff = old_ai - old_aj
            ai = old_ai + delta
            aj = old_aj + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            else:
                if aj > c:
                    aj, ai = c, c + diff
        else:
            delta = (gi - gj) / quad
            total = old_ai + old_aj
            ai = old_ai - delta
            aj = old_aj + delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
            else:
                if aj < 0:
                    aj, ai = 0.0, total
            if total > c:
                if aj > c:
                    aj, ai = c, total - c
            else:
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += (y * yi * k_i) * (ai - old_ai) + (y * yj * k_j) * (aj - old_aj)
        it += 1
    else:
        warnings.warn(
            f"SMO hit the iteration cap ({max_iter}) with KKT gap {gap:.3g}",
            RuntimeWarning,
        )

    free = (alpha > eps) & (alpha < c - eps)
    yg = -y * grad  # equals y_i - raw_score_i
    if free.any():
        bias = float(yg[free].mean())
    else:
        up = (pos & (alpha < c - eps)) | (~pos & (alpha > eps))
        low = (~pos & (alpha < c - eps)) | (pos & (alpha > eps))
        hi = yg[up].max() if up.any() else 0.0
        lo = yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, float(max(gap, 0.0)), it


def platt_fit(scores: np.ndarray, positive: np.ndarray,
              max_iter: int = 100) -> tuple[float, float]:
    """Fit the logistic map ``P(y=1|s) = 1 / (1 + exp(A s + B))``.

    Newton iterations with backtracking on the regularized targets
    ``(n+ + 1)/(n+ + 2)`` and ``1/(n- + 2)``; numerically stable for
    arbitrarily large margins.
    """
    prior1 = float(positive.sum())
    prior0 = float(positive.size - prior1)
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(positive, hi, lo)
    a, b = 0.0, float(np.log((prior0 + 1.0) / (prior1 + 1.0)))
    sigma = 1e-12
    min_step = 1e-10

    def objective(a_, b_):
        f = a_ * scores + b_
        out = np.empty_like(f)
        m = f >= 0
        out[m] = t[m] * f[m] + np.log1p(np.exp(-f[m]))
        out[~m] = (t[~m] - 1.0) * f[~m] + np.log1p(np.exp(f[~m]))
        return float(out.sum())

    fval = objective(a, b)
    for _ in range(max_iter):
        f = a * scores + b
        p = _sigmoid(f)
        q = 1.0 - p
        d1 = t - p
        d2 = p * q
        g1 = float(np.sum(scores * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        h11 = float(np.sum(scores * scores * d2)) + sigma
        h22 = float(np.sum(d2)) + sigma
        h21 = float(np.sum(scores * d2))
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            new_a, new_b = a + step * da, b + step * db
            new_f = objective(new_a, new_b)
            if new_f < fval + 1e-4 * step * gd:
                a, b, fval = new_a, new_b, new_f
                break
            step /= 2.0
        else:
            break  # line search failed; keep current point
    return a, b


def _sigmoid(f: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(f)) without overflow on either tail."""
    out = np.empty_like(f)
    pos = f >= 0
    e = np.exp(-f[pos])
    out[pos] = e / (1.0 + e)
    e = np.exp(f[~pos])
    out[~pos] = 1.0 / (1.0 + e)
    return out


class TrainedSmo(Classifier):
    """One-vs-rest SMO model: shared support-vector matrix plus per-class
    dual coefficients, bias and Platt parameters."""

    def __init__(self, spec: SmoSpec, space: tuple[str, ...], sv_x,
                 sv_index: list[np.ndarray], sv_coef: list[np.ndarray],
                 bias: np.ndarray, platt_a: np.ndarray, platt_b: np.ndarray,
                 kkt_gaps: np.ndarray):
        self.spec = spec
        self.space = space
        self.sv_x = sv_x
        self.sv_index = sv_index
        self.sv_coef = sv_coef
        self.bias = bias
        self.platt_a = platt_a
        self.platt_b = platt_b
        self.kkt_gaps = kkt_gaps
        self.n_features = sv_x.shape[1]

    def decision_scores(self, x) -> np.ndarray:
        if x.shape[1] != self.n_features:
            raise DataError(f"input has {x.shape[1]} features, model expects "
                            f"{self.n_features}")
        gram = _poly_kernel(x, self.sv_x, self.spec.degree)
        scores = np.empty((x.shape[0], self.n_labels))
        for cls in range(self.n_labels):
            scores[:, cls] = gram[:, self.sv_index[cls]] @ self.sv_coef[cls] \
                + self.bias[cls]
        return scores

    def predict_proba_batch(self, x) -> np.ndarray:
        scores = self.decision_scores(x)
        cal = np.empty_like(scores)
        for cls in range(self.n_labels):
            cal[:, cls] = _sigmoid(self.platt_a[cls] * scores[:, cls]
                                   + self.platt_b[cls])
        totals = cal.sum(axis=1, keepdims=True)
        flat = (totals == 0.0).ravel()
        if flat.any():
            cal[flat] = 1.0
            totals = cal.sum(axis=1, keepdims=True)
        return cal / totals

    def to_dict(self) -> dict:
        sv = self.sv_x
        if sp.issparse(sv):
            coo = sv.tocoo()
            sv_doc = {
                "sparse": True,
                "shape": list(coo.shape),
                "row": coo.row.tolist(),
                "col": coo.col.tolist(),
                "data": coo.data.tolist(),
            }
        else:
            sv_doc = {"sparse": False, "values": sv.tolist()}
        return {
            "kind": "smo_margin",
            "degree": self.spec.degree,
            "c": self.spec.c,
            "tol": self.spec.tol,
            "max_iter": self.spec.max_iter,
            "space": list(self.space),
            "sv_x": sv_doc,
            "sv_index": [v.tolist() for v in self.sv_index],
            "sv_coef": [v.tolist() for v in self.sv_coef],
            "bias": self.bias.tolist(),
            "platt_a": self.platt_a.tolist(),
            "platt_b": self.platt_b.tolist(),
            "kkt_gaps": self.kkt_gaps.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "TrainedSmo":
        sv_doc = doc["sv_x"]
        if sv_doc["sparse"]:
            sv = sp.csr_matrix(
                (np.asarray(sv_doc["data"], dtype=np.float64),
                 (sv_doc["row"], sv_doc["col"])),
                shape=tuple(sv_doc["shape"]),
            )
        else:
            sv = np.asarray(sv_doc["values"], dtype=np.float64)
            if sv.ndim == 1:
                sv = sv.reshape((0, 0)) if sv.size == 0 else sv[None, :]
        return TrainedSmo(
            SmoSpec(degree=doc["degree"], c=doc["c"], tol=doc["tol"],
                    max_iter=doc["max_iter"]),
            tuple(doc["space"]),
            sv,
            [np.asarray(v, dtype=np.int64) for v in doc["sv_index"]],
            [np.asarray(v, dtype=np.float64) for v in doc["sv_coef"]],
            np.asarray(doc["bias"], dtype=np.float64),
            np.asarray(doc["platt_a"], dtype=np.float64),
            np.asarray(doc["platt_b"], dtype=np.float64),
            np.asarray(doc["kkt_gaps"], dtype=np.float64),
        )


def fit_smo(spec: SmoSpec, x, y: np.ndarray, space: tuple[str, ...],
            seed: int) -> TrainedSmo:
    """Train one-vs-rest SMO problems plus Platt calibration.

    Deterministic regardless of ``seed`` (the solver draws no randomness);
    the argument is accepted for interface parity with other classifiers.
    """
    del seed
    n_classes = len(space)
    if n_classes < 2:
        raise TrainingError("margin classifier needs at least 2 labels")
    kernel = _Kernel(x, spec.degree)
    n = x.shape[0]
    alphas = np.zeros((n_classes, n))
    bias = np.zeros(n_classes)
    platt_a = np.zeros(n_classes)
    platt_b = np.zeros(n_classes)
    gaps = np.zeros(n_classes)
    for cls in range(n_classes):
        y_bin = np.where(y == cls, 1.0, -1.0)
        alpha, b, gap, _ = solve_binary(kernel, y_bin, spec.c, spec.tol,
                                        spec.max_iter)
        sv = np.nonzero(alpha > 1e-12)[0]
        raw = kernel.block(sv) @ (alpha[sv] * y_bin[sv]) + b
        alphas[cls] = alpha
        bias[cls] = b
        gaps[cls] = gap
        platt_a[cls], platt_b[cls] = platt_fit(raw, y == cls)

    sv_mask = (alphas > 1e-12).any(axis=0)
    sv_rows = np.nonzero(sv_mask)[0]
    remap = -np.ones(n, dtype=np.int64)
    remap[sv_rows] = np.arange(sv_rows.size)
    sv_x = x[sv_rows]
    sv_index, sv_coef = [], []
    for cls in range(n_classes):
        keep = np.nonzero(alphas[cls] > 1e-12)[0]
        sv_index.append(remap[keep])
        sv_coef.append(alphas[cls][keep] * np.where(y[keep] == cls, 1.0, -1.0))
    return TrainedSmo(spec, space, sv_x, sv_index, sv_coef, bias,
                      platt_a, platt_b, gaps)
