"""0-1 risk relations under label noise, worst-case bounds and g-vectors.

Risks are misclassification rates.  The affine map between clean and noisy
risk under uniform symmetric noise, its covariance form for instance-dependent
rates, the worst-case gap bounds for column-permutation matrices and the
g-vector bookkeeping all live here.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DomainError, RegimeError
from .estimators import evaluate_accuracy, plugin_predict
from .noise import TransitionMatrix

ORDER_TOL = 1e-12


class RegimeWarning(UserWarning):
    """Inputs lie outside the class-preserving range of a formula."""


def empirical_risk01(model, dataset, track: str = "clean") -> float:
    if dataset.n == 0:
        raise DomainError("risk of an empty dataset is undefined")
    return 1.0 - evaluate_accuracy(model, dataset, track)


def affine_coefficients(eta: float, c: int) -> tuple[float, float]:
    """Slope and intercept of noisy accuracy as a function of clean accuracy."""
    return 1.0 - c * eta / (c - 1), eta / (c - 1)


def affine_noisy_risk(R: float, eta: float, c: int) -> float:
    """Noisy 0-1 risk under uniform symmetric noise at rate ``eta``."""
    if eta >= (c - 1) / c:
        warnings.warn(f"eta={eta} is not below the class-preserving threshold {(c - 1) / c:.4g}",
                      RegimeWarning, stacklevel=2)
    return R * (1.0 - c * eta / (c - 1)) + eta


def affine_noisy_accuracy(A: float, eta: float, c: int) -> float:
    slope, intercept = affine_coefficients(eta, c)
    return A * slope + intercept


@dataclass(frozen=True)
class CovarianceStats:
    """Moments of the noise rate ``eta_x`` and the accuracy function ``g(x)``.

    ``g(x)`` is the clean probability of the predicted class at ``x``.  The
    moments use the plug-in (1/n, or weight-normalised) estimators.
    """

    eta_bar: float
    sigma_eta: float
    sigma_g: float
    cov: float
    mean_g: float = float("nan")

    def __post_init__(self):
        if self.sigma_eta < 0 or self.sigma_g < 0:
            raise DomainError("standard deviations must be nonnegative")
        bound = self.sigma_eta * self.sigma_g
        if abs(self.cov) > bound * (1 + 1e-9) + 1e-15:
            raise DomainError(f"|cov|={abs(self.cov):.3g} exceeds sigma_eta*sigma_g={bound:.3g}")

    @classmethod
    def from_samples(cls, g, eta_x, weights=None) -> "CovarianceStats":
        g = np.asarray(g, dtype=np.float64)
        e = np.asarray(eta_x, dtype=np.float64)
        w = np.full(g.shape, 1.0 / g.size) if weights is None else np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        mg, me = float(w @ g), float(w @ e)
        vg = float(w @ (g - mg) ** 2)
        ve = float(w @ (e - me) ** 2)
        cov = float(w @ ((g - mg) * (e - me)))
        sg, se = math.sqrt(vg), math.sqrt(ve)
        # rounding can push |cov| a hair over the product
        cov = max(-se * sg, min(se * sg, cov))
        return cls(eta_bar=me, sigma_eta=se, sigma_g=sg, cov=cov, mean_g=mg)


def covariance_noisy_risk(R: float, stats: CovarianceStats, c: int) -> float:
    """Noisy risk under symmetric noise whose rate varies with the instance."""
    k = c / (c - 1)
    return R * (1.0 - k * stats.eta_bar) + stats.eta_bar + k * stats.cov


def covariance_band(R: float, stats: CovarianceStats, c: int) -> tuple[float, float]:
    """Interval for the noisy risk using only the two standard deviations."""
    k = c / (c - 1)
    centre = R * (1.0 - k * stats.eta_bar) + stats.eta_bar
    half = k * stats.sigma_eta * stats.sigma_g
    return centre - half, centre + half


# ---------------------------------------------------------------------------
# worst-case bounds


@dataclass(frozen=True)
class BoundReport:
    regime: str
    inputs: dict
    bound: float

    def lines(self) -> list[str]:
        out = [f"regime: {self.regime}"]
        out += [f"{k}: {v!r}" for k, v in self.inputs.items()]
        out.append(f"bound: {self.bound!r}")
        return out

    def to_csv(self) -> str:
        head = [f"#{k}={v!r}" for k, v in self.inputs.items()]
        return "\n".join(head + ["regime,bound", f"{self.regime},{self.bound!r}"]) + "\n"


def worst_case_gap(R_eta_star: float, R_eta_l: float | None, eta: float, eta_min: float,
                   eta_max: float) -> BoundReport:
    """Bound on the clean-risk gap between the noisy-risk and clean-risk minimisers.

    Applies to separable data and transition matrices whose columns are
    permutations of one another, with ``eta`` the off-diagonal column mass
    and ``eta_min``/``eta_max`` the extreme off-diagonal entries.  Without
    ``R_eta_l`` (the noisy risk of the clean-risk minimiser) the looser form
    that needs only the optimal noisy risk is returned.
    """
    if eta_min > eta_max:
        raise RegimeError(f"eta_min={eta_min} exceeds eta_max={eta_max}")
    d_max = 1.0 - eta - eta_max
    d_min = 1.0 - eta - eta_min
    if d_max <= 0:
        raise RegimeError(f"1 - eta - eta_max = {d_max:.6g} must be positive")
    inputs = {"R_eta_star": R_eta_star, "eta": eta, "eta_min": eta_min, "eta_max": eta_max}
    if R_eta_l is None:
        bound = (R_eta_star - eta) * (1.0 / d_max - 1.0 / d_min)
        return BoundReport("optimal-noisy-risk", inputs, bound)
    inputs["R_eta_l"] = R_eta_l
    bound = (R_eta_star - eta) / d_max - (R_eta_l - eta) / d_min
    return BoundReport("general", inputs, bound)


def column_permutation_rates(T: TransitionMatrix) -> tuple[float, float, float]:
    """``(eta, eta_min, eta_max)`` for a matrix whose columns permute each other."""
    t = np.asarray(T)
    cols = np.sort(t, axis=0)
    if np.max(np.abs(cols - cols[:, :1])) > 1e-9:
        raise RegimeError("columns of T are not permutations of one another")
    diag = np.diag(t)
    if np.ptp(diag) > 1e-9:
        raise RegimeError("diagonal of T is not constant")
    off = t[~np.eye(t.shape[0], dtype=bool)]
    return float(1.0 - diag[0]), float(off.min()), float(off.max())


def worst_case_gap_from_matrix(T: TransitionMatrix, R_eta_star: float,
                               R_eta_l: float | None = None) -> BoundReport:
    eta, lo, hi = column_permutation_rates(T)
    return worst_case_gap(R_eta_star, R_eta_l, eta, lo, hi)


def pairwise_gap(R_eta_k: float, eta: float) -> BoundReport:
    """Gap bound under pairwise noise at rate ``eta`` < 1/2."""
    if not 0 <= eta < 0.5:
        raise RegimeError(f"pairwise bound needs 0 <= eta < 1/2, got {eta}")
    bound = eta * (R_eta_k - eta) / ((1.0 - 2.0 * eta) * (1.0 - eta))
    return BoundReport("pairwise", {"R_eta_k": R_eta_k, "eta": eta}, bound)


# ---------------------------------------------------------------------------
# order violations


def simplex_grid(c: int, resolution: float = 0.02, chunk: int = 200_000):
    """Yield blocks of simplex grid points in lexicographic order.

    Points are ``counts / m`` with ``m = round(1 / resolution)`` and
    nonnegative integer ``counts`` summing to ``m``.
    """
    m = int(round(1.0 / resolution))
    if m < 1:
        raise DomainError(f"resolution {resolution} is too coarse")
    bars = itertools.combinations(range(m + c - 1), c - 1)
    while True:
        block = np.array(list(itertools.islice(bars, chunk)), dtype=np.int64).reshape(-1, c - 1)
        if block.size == 0 and c > 1:
            return
        edges = np.hstack([np.full((block.shape[0], 1), -1), block, np.full((block.shape[0], 1), m + c - 1)])
        counts = np.diff(edges, axis=1) - 1
        yield counts, counts / m
        if c == 1:
            return


def find_order_violation(T: TransitionMatrix, resolution: float = 0.02):
    """First grid point where ``T`` reverses the order of two class probabilities.

    Returns ``(p, (k1, k2))`` with ``p[k1] > p[k2]`` but ``(T p)[k1] < (T p)[k2]``,
    the lexicographically smallest such witness, or ``None``.
    """
    t = np.asarray(T, dtype=np.float64)
    c = t.shape[0]
    if c > 6:
        raise DomainError(f"grid search supports c <= 6, got {c}")
    pairs = [(a, b) for a in range(c) for b in range(c) if a != b]
    for counts, P in simplex_grid(c, resolution):
        Q = P @ t.T
        hit = np.zeros((P.shape[0], len(pairs)), dtype=bool)
        for col, (a, b) in enumerate(pairs):
            hit[:, col] = (counts[:, a] > counts[:, b]) & (Q[:, a] < Q[:, b] - ORDER_TOL)
        rows = np.flatnonzero(hit.any(axis=1))
        if rows.size:
            r = rows[0]
            col = int(np.argmax(hit[r]))
            return P[r].copy(), pairs[col]
    return None


# ---------------------------------------------------------------------------
# g-vectors


@dataclass(frozen=True)
class GVector:
    """Share of predictions landing on each noisy-posterior rank (rank 1 first)."""

    values: np.ndarray
    n: int = 0
    n_tied: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __getitem__(self, k):
        return self.values[k]


def g_vector(model, instances, noisy_posterior) -> GVector:
    """Empirical g-vector of ``model``'s plug-in predictions.

    ``noisy_posterior`` is a callable ``X -> (n, c)`` or an ``(n, c)`` array.
    Ranks follow competition ranking: a predicted label that shares its
    noisy probability with other labels takes the best rank of the tied
    group.  The tied value equals the sorted value at that rank, so
    ``g @ sorted_probs`` is still the noisy accuracy.  Such instances are
    counted in ``n_tied``.
    """
    X = np.asarray(instances)
    P = np.asarray(noisy_posterior(X) if callable(noisy_posterior) else noisy_posterior, dtype=np.float64)
    pred = plugin_predict(model, X) if not isinstance(model, np.ndarray) else np.asarray(model)
    return g_vector_from_predictions(pred, P)


def g_vector_from_predictions(pred, P) -> GVector:
    P = np.asarray(P, dtype=np.float64)
    n, c = P.shape
    pred = np.asarray(pred, dtype=np.int64)
    mine = P[np.arange(n), pred]
    scale = np.maximum(1.0, np.abs(mine))[:, None]
    tied = np.sum(np.abs(P - mine[:, None]) <= 1e-12 * scale, axis=1) > 1
    rank = np.sum(P > mine[:, None] + 1e-12 * scale, axis=1)  # 0-based competition rank
    counts = np.bincount(rank, minlength=c).astype(np.float64)
    values = counts / n if n else np.full(c, np.nan)
    return GVector(values, n, int(tied.sum()))


def gvector_noisy_accuracy(g, ranked_probs) -> float:
    g = np.asarray(getattr(g, "values", g), dtype=np.float64)
    r = np.asarray(ranked_probs, dtype=np.float64)
    if g.shape != r.shape:
        raise DomainError(f"g has {g.size} entries but {r.size} ranked probabilities were given")
    return float(g @ r)


def confusion_matrix(pred, clean, c: int) -> np.ndarray:
    """Joint frequencies ``C[i, j]`` of prediction ``i`` and clean class ``j``."""
    C = np.zeros((c, c))
    np.add.at(C, (np.asarray(pred), np.asarray(clean)), 1.0)
    return C / max(1, len(pred))


def noisy_accuracy_from_confusion(C, T) -> float:
    """Expected noisy accuracy: the sum of the elementwise product of ``T`` and ``C``."""
    C = np.asarray(C, dtype=np.float64)
    t = np.asarray(T, dtype=np.float64)
    if C.shape != t.shape:
        raise DomainError(f"confusion shape {C.shape} does not match T shape {t.shape}")
    if C.min() < 0 or abs(C.sum() - 1.0) > 1e-9:
        raise DomainError("confusion entries must be nonnegative and sum to 1")
    return float(np.sum(t * C))


@dataclass(frozen=True)
class MinimaWindow:
    t1: int
    t2: int
    width: int
    degenerate: bool
    argmins: tuple[int, ...] = ()


def simultaneous_minima_window(trajectories) -> MinimaWindow:
    """Span of the epochs (1-based) at which each series attains its minimum.

    Each series contributes its earliest minimum.  A constant series has no
    informative minimum; it reports epoch 1 and marks the result degenerate.
    """
    S = np.atleast_2d(np.asarray(trajectories, dtype=np.float64))
    if S.shape[1] < 2:
        raise DomainError("need at least two epochs")
    argmins = tuple(int(np.argmin(s)) + 1 for s in S)
    degenerate = bool(np.any(np.ptp(S, axis=1) == 0))
    t1, t2 = min(argmins), max(argmins)
    return MinimaWindow(t1, t2, t2 - t1, degenerate, argmins)


# ---------------------------------------------------------------------------
# exact risks on finite supports


@dataclass
class FiniteDistribution:
    """A distribution over finitely many instances with known class posteriors.

    ``weights`` and ``posteriors`` may hold :class:`fractions.Fraction`
    entries, in which case every risk below is computed exactly.  ``noise``
    is a single matrix or one matrix per support point.
    """

    weights: Sequence
    posteriors: Sequence  # (m, c)
    noise: object = None  # matrix (c, c) or sequence of m matrices
    _m: int = field(init=False, repr=False)

    def __post_init__(self):
        self._m = len(self.weights)
        if len(self.posteriors) != self._m:
            raise DomainError("weights and posteriors differ in length")

    @property
    def c(self) -> int:
        return len(self.posteriors[0])

    def noise_at(self, i):
        if self.noise is None:
            return None
        T = self.noise
        if isinstance(T, TransitionMatrix):
            return T.entries.tolist()
        arr = T if isinstance(T, list) else np.asarray(T, dtype=object).tolist()
        return arr[i] if _depth(arr) == 3 else arr

    def noisy_posterior(self, i):
        p = list(self.posteriors[i])
        T = self.noise_at(i)
        if T is None:
            return p
        c = len(p)
        return [sum(T[a][b] * p[b] for b in range(c)) for a in range(c)]

    def clean_risk(self, predictions) -> object:
        return sum(w * (1 - self.posteriors[i][int(predictions[i])]) for i, w in enumerate(self.weights))

    def noisy_risk(self, predictions) -> object:
        return sum(w * (1 - self.noisy_posterior(i)[int(predictions[i])]) for i, w in enumerate(self.weights))

    def bayes_predictions(self, noisy: bool = False) -> list[int]:
        out = []
        for i in range(self._m):
            p = self.noisy_posterior(i) if noisy else self.posteriors[i]
            out.append(max(range(len(p)), key=lambda k: (p[k], -k)))
        return out


def _depth(x):
    d = 0
    while isinstance(x, (list, tuple)):
        d += 1
        x = x[0] if x else None
    return d


def to_fraction_matrix(T, limit: int = 10**6):
    """Matrix entries as fractions (entries are exact binary floats)."""
    return [[Fraction(float(v)).limit_denominator(limit) for v in row] for row in np.asarray(T)]


__all__ = [
    "RegimeWarning", "empirical_risk01", "affine_coefficients", "affine_noisy_risk",
    "affine_noisy_accuracy", "CovarianceStats", "covariance_noisy_risk", "covariance_band",
    "BoundReport", "worst_case_gap", "worst_case_gap_from_matrix", "column_permutation_rates",
    "pairwise_gap", "simplex_grid", "find_order_violation", "GVector", "g_vector",
    "g_vector_from_predictions", "gvector_noisy_accuracy", "confusion_matrix",
    "noisy_accuracy_from_confusion", "MinimaWindow", "simultaneous_minima_window",
    "FiniteDistribution", "to_fraction_matrix",
]
