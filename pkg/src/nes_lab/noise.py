"""Label-noise models.

Transition matrices follow the column convention ``T[i, j] = p(noisy=i | clean=j)``,
so every column is a distribution over noisy labels and ``T @ p`` maps a clean
class posterior to the noisy one.  Labels are 0-based throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateGeometryError, DomainError, InvalidPairingError
from .rng import stream

STOCHASTIC_TOL = 1e-9
TIE_TOL = 1e-12

# CIFAR10 index order: plane, automobile, bird, cat, deer, dog, frog, horse, ship, truck.
CIFAR10_PAIRS = ((9, 1), (2, 0), (4, 7), (3, 5), (5, 3))
MNIST_GROUPS = ((0, 1, 2), (3, 4, 5), (6, 7, 8))


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic ``c x c`` matrix of label flip probabilities."""

    entries: np.ndarray

    def __post_init__(self):
        t = np.array(self.entries, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] < 2:
            raise DomainError(f"transition matrix must be square with c >= 2, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise DomainError("transition matrix has non-finite entries")
        if t.min() < -STOCHASTIC_TOL or t.max() > 1 + STOCHASTIC_TOL:
            raise DomainError("transition matrix entries must lie in [0, 1]")
        sums = t.sum(axis=0)
        bad = np.flatnonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)
        if bad.size:
            raise DomainError(f"columns {bad.tolist()} do not sum to 1 (sums {sums[bad].tolist()})")
        t = np.clip(t, 0.0, 1.0)
        t.setflags(write=False)
        object.__setattr__(self, "entries", t)

    @property
    def c(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __matmul__(self, other):
        if isinstance(other, TransitionMatrix):
            return TransitionMatrix(self.entries @ other.entries)
        return self.entries @ np.asarray(other)

    def __eq__(self, other):
        return isinstance(other, TransitionMatrix) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    def allclose(self, other, atol=1e-12) -> bool:
        return np.allclose(self.entries, np.asarray(other), atol=atol, rtol=0)

    def to_text(self) -> str:
        """Plain-text form: ``c`` on the first line, then ``c`` rows."""
        rows = [" ".join(format(v, ".17g") for v in row) for row in self.entries]
        return "\n".join([str(self.c), *rows]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TransitionMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise DomainError("empty matrix text")
        try:
            c = int(lines[0])
            rows = [[float(tok) for tok in ln.split()] for ln in lines[1:]]
        except ValueError as exc:
            raise DomainError(f"unparseable matrix text: {exc}") from None
        if len(rows) != c or any(len(r) != c for r in rows):
            raise DomainError(f"matrix text declares c={c} but holds {len(rows)} rows")
        return cls(np.array(rows))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "TransitionMatrix":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _check_rate(eta, upper=1.0):
    if not (0.0 <= eta <= upper) or math.isnan(eta):
        raise DomainError(f"noise rate must lie in [0, {upper}], got {eta}")


def _check_classes(c):
    if int(c) != c or c < 2:
        raise DomainError(f"class count must be an integer >= 2, got {c}")


def build_symmetric(c: int, eta: float) -> TransitionMatrix:
    """Flip to each other label with probability ``eta / (c - 1)``."""
    _check_classes(c)
    _check_rate(eta)
    t = np.full((c, c), eta / (c - 1))
    np.fill_diagonal(t, 1.0 - eta)
    return TransitionMatrix(t)


def symmetric_injection(c: int, eta: float, include_original: bool = False) -> TransitionMatrix:
    """Matrix realised by resampling a fraction ``eta`` of labels uniformly.

    With ``include_original`` the resampled label may equal the original one
    (the MNIST/FashionMNIST convention), so the effective flip rate is
    ``eta * (c - 1) / c``.  Without it the new label is drawn from the other
    ``c - 1`` labels and the matrix is exactly :func:`build_symmetric`.
    """
    _check_rate(eta)
    if include_original:
        return build_symmetric(c, eta * (c - 1) / c)
    return build_symmetric(c, eta)


def build_circular(c: int, eta: float) -> TransitionMatrix:
    """Label ``j`` moves to ``j + 1`` (wrapping) with probability ``eta``."""
    _check_classes(c)
    _check_rate(eta)
    t = (1.0 - eta) * np.eye(c)
    for j in range(c):
        t[(j + 1) % c, j] += eta
    return TransitionMatrix(t)


def build_pairwise(c: int, pairs: Sequence[tuple[int, int]], eta: float) -> TransitionMatrix:
    """Each ``(source, target)`` pair sends ``source`` to ``target`` with probability ``eta``."""
    _check_classes(c)
    _check_rate(eta)
    sources, targets = set(), set()
    t = np.eye(c)
    for src, dst in pairs:
        if not (0 <= src < c and 0 <= dst < c):
            raise InvalidPairingError(f"pair ({src}, {dst}) outside labels 0..{c - 1}")
        if src == dst:
            raise InvalidPairingError(f"pair ({src}, {dst}) maps a label to itself")
        if src in sources:
            raise InvalidPairingError(f"label {src} appears twice as a source")
        if dst in targets:
            raise InvalidPairingError(f"label {dst} appears twice as a target")
        sources.add(src)
        targets.add(dst)
        t[src, src] = 1.0 - eta
        t[dst, src] = eta
    return TransitionMatrix(t)


def build_asym_mnist(eta: float) -> TransitionMatrix:
    """Block noise inside {0,1,2}, {3,4,5}, {6,7,8}; label 9 is never flipped."""
    _check_rate(eta, 0.5)
    block = np.array([[1 - eta, eta, eta], [eta, 1 - eta, eta], [0.0, 0.0, 1 - 2 * eta]])
    t = np.eye(10)
    for g in MNIST_GROUPS:
        t[np.ix_(g, g)] = block
    return TransitionMatrix(t)


def _check_partition(groups, c=None):
    flat = [int(k) for g in groups for k in g]
    n = len(flat) if c is None else c
    if sorted(flat) != list(range(n)):
        raise DomainError(f"groups {groups!r} do not partition labels 0..{n - 1}")
    return n


def build_superclass_circular(groups: Sequence[Sequence[int]], eta: float) -> TransitionMatrix:
    """Circular noise inside each group, following the listed order."""
    _check_rate(eta)
    c = _check_partition(groups)
    t = np.eye(c)
    for g in groups:
        g = [int(k) for k in g]
        if len(g) < 2:
            continue
        block = build_circular(len(g), eta).entries
        t[np.ix_(g, g)] = block
    return TransitionMatrix(t)


def build_subset_symmetric(c: int, groups: Sequence[Sequence[int]], eta: float) -> TransitionMatrix:
    """Symmetric noise restricted to each group; labels outside groups stay fixed."""
    _check_classes(c)
    _check_rate(eta)
    flat = [k for g in groups for k in g]
    if len(set(flat)) != len(flat) or any(not 0 <= k < c for k in flat):
        raise DomainError(f"groups {groups!r} overlap or leave 0..{c - 1}")
    t = np.eye(c)
    for g in groups:
        if len(g) >= 2:
            t[np.ix_(g, g)] = build_symmetric(len(g), eta).entries
    return TransitionMatrix(t)


def ternary_asymmetric(eta: float) -> TransitionMatrix:
    """Three-class asymmetric matrix used for the g-vector experiment."""
    _check_rate(eta, 2 / 3)
    a, b = 0.5 * eta, 1 - 1.5 * eta
    return TransitionMatrix(np.array([[b, a, eta], [eta, b, a], [a, eta, b]]))


FIVE_CLASS_T = TransitionMatrix(np.array([
    [0.5, 0.05, 0.1, 0.15, 0.2],
    [0.2, 0.5, 0.05, 0.1, 0.15],
    [0.15, 0.2, 0.5, 0.05, 0.1],
    [0.1, 0.15, 0.2, 0.5, 0.05],
    [0.05, 0.1, 0.15, 0.2, 0.5],
]))

PERM_SYMMETRIC_T = TransitionMatrix(np.array([
    [0.5, 0.2, 0.3],
    [0.3, 0.5, 0.2],
    [0.2, 0.3, 0.5],
]))


# ---------------------------------------------------------------------------
# classification of matrices


def _argmax_set(v, tol=TIE_TOL):
    """Indices attaining the maximum of ``v`` up to a relative tolerance."""
    v = np.asarray(v, dtype=np.float64)
    top = v.max()
    return np.flatnonzero(v >= top - tol * max(1.0, abs(top)))


def is_class_preserving_at(T, posterior) -> bool | None:
    """Whether ``T`` keeps the most likely class of ``posterior``.

    Returns ``None`` when the answer hinges on a tie: the clean posterior has
    no unique maximum, or the clean argmax shares the noisy maximum with
    another label.  A tie among other labels alone is still ``False``.
    """
    t = np.asarray(T, dtype=np.float64)
    p = np.asarray(posterior, dtype=np.float64)
    if p.shape != (t.shape[1],):
        raise DomainError(f"posterior has shape {p.shape}, expected ({t.shape[1]},)")
    if p.min() < -STOCHASTIC_TOL or abs(p.sum() - 1.0) > STOCHASTIC_TOL:
        raise DomainError("posterior is not a point of the probability simplex")
    clean = _argmax_set(p)
    if clean.size > 1:
        return None
    noisy = _argmax_set(t @ p)
    if clean[0] not in noisy:
        return False
    return True if noisy.size == 1 else None


@dataclass(frozen=True)
class NoiseTaxonomyReport:
    c: int
    uniform: bool
    symmetric: bool
    pairwise: bool
    circular: bool
    diagonally_dominant: bool
    class_preserving_for_separable: bool
    eta: float
    threshold: float


def taxonomy(T: TransitionMatrix, tol: float = STOCHASTIC_TOL) -> NoiseTaxonomyReport:
    t = np.asarray(T)
    c = t.shape[0]
    off = ~np.eye(c, dtype=bool)
    offvals = t[off]
    symmetric = bool(np.ptp(offvals) <= tol and np.ptp(np.diag(t)) <= tol)

    nonzero_off = (t > tol) & off
    pairwise = bool(nonzero_off.sum(axis=0).max() <= 1 and nonzero_off.sum(axis=1).max() <= 1)

    eta_c = 1.0 - t[0, 0]
    circ = (1.0 - eta_c) * np.eye(c)
    for j in range(c):
        circ[(j + 1) % c, j] += eta_c
    circular = bool(np.max(np.abs(t - circ)) <= tol)

    masked = np.where(off, t, -np.inf)
    dd = bool(np.all(np.diag(t) - masked.max(axis=0) > tol))
    return NoiseTaxonomyReport(
        c=c,
        uniform=True,
        symmetric=symmetric,
        pairwise=pairwise,
        circular=circular,
        diagonally_dominant=dd,
        # with one-hot clean posteriors the noisy posterior is a column of T
        class_preserving_for_separable=dd,
        eta=float(1.0 - np.mean(np.diag(t))),
        threshold=(c - 1) / c,
    )


def class_preserving_threshold(builder: Callable[[float], TransitionMatrix], hi: float = 1.0,
                               tol: float = 1e-10) -> float:
    """Largest rate at which ``builder(eta)`` stays diagonally dominant.

    Bisection, assuming dominance holds at 0 and fails monotonically.
    """
    def ok(eta):
        try:
            return taxonomy(builder(eta), tol=0.0).diagonally_dominant
        except DomainError:
            return False

    if ok(hi):
        return hi
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# noise fields


class NoiseKind(str, enum.Enum):
    SYMMETRIC = "symmetric"
    PAIRWISE = "pairwise"
    CIRCULAR = "circular"
    PERMUTATION_SYMMETRIC = "permutation-symmetric"
    CUSTOM = "custom"
    PCA_SPLIT = "pca-split"
    CLASSIFIER_INDUCED = "classifier-induced"


class NoiseField:
    """Instance-dependent transition matrices ``x -> T(x)``.

    Subclasses implement :meth:`columns`, the distribution of the noisy label
    for each (instance, clean label) pair, which is all sampling needs.
    """

    kind: NoiseKind = NoiseKind.CUSTOM
    eta: float = 0.0
    c: int = 0
    uniform: bool = False

    def columns(self, instances, labels) -> np.ndarray:
        raise NotImplementedError

    def matrix_at(self, x) -> TransitionMatrix:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cols = self.columns(np.repeat(x, self.c, axis=0), np.arange(self.c))
        return TransitionMatrix(cols.T)

    def describe(self) -> str:
        return f"{self.kind.value}(eta={self.eta:g})"


class UniformNoise(NoiseField):
    """The constant field: the same matrix at every instance."""

    uniform = True

    def __init__(self, T: TransitionMatrix, kind: NoiseKind | str = NoiseKind.CUSTOM, eta: float | None = None):
        self.T = T
        self.c = T.c
        self.kind = NoiseKind(kind)
        self.eta = float(taxonomy(T).eta if eta is None else eta)

    def columns(self, instances, labels):
        return self.T.entries[:, np.asarray(labels)].T

    def matrix_at(self, x):
        return self.T

    def describe(self):
        return f"{self.kind.value}(eta={self.eta:g}, c={self.c})"


def apply_noise(labels, field: NoiseField | TransitionMatrix, instances=None, seed: int = 0) -> np.ndarray:
    """Resample every label independently from its column of ``field(x)``."""
    if isinstance(field, TransitionMatrix):
        field = UniformNoise(field)
    y = np.asarray(labels)
    if y.size and (y.min() < 0 or y.max() >= field.c or not np.issubdtype(y.dtype, np.integer)):
        raise DomainError(f"labels must be integers in 0..{field.c - 1}")
    if y.size == 0:
        return y.astype(np.int64)
    if instances is None:
        if not field.uniform:
            raise DomainError("a non-uniform noise field needs the instances")
        instances = np.zeros((y.size, 1))
    probs = field.columns(instances, y)
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = stream(seed, "apply_noise").random(y.size)
    out = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(out, field.c - 1).astype(np.int64)


def _power_iteration(X, tol=1e-8, max_iter=1000, seed=0):
    """Leading eigenvector of ``X.T @ X`` without forming it."""
    v = stream(seed, "power_iteration").standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = X.T @ (X @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise DegenerateGeometryError("power iteration collapsed to zero")
        w /= norm
        if np.linalg.norm(w - v) <= tol * np.linalg.norm(v):
            v = w
            break
        v = w
    # fix the sign: largest-magnitude component positive
    k = int(np.argmax(np.abs(v)))
    return v if v[k] >= 0 else -v


class PcaSplitNoise(NoiseField):
    """Per-class PC1 split between two alteration matrices.

    For an instance of clean class ``j``, project ``x - mean_j`` on class
    ``j``'s first principal component.  Negative projections use
    ``matrix_a``, the rest ``matrix_b``.  The label is kept with probability
    ``1 - eta`` and otherwise redrawn from the chosen matrix's column ``j``.
    """

    kind = NoiseKind.PCA_SPLIT

    def __init__(self, means, components, eta, matrix_a, matrix_b):
        self.means = np.asarray(means)
        self.components = np.asarray(components)
        self.eta = float(eta)
        self.matrix_a = matrix_a
        self.matrix_b = matrix_b
        self.c = matrix_a.c

    def side(self, instances, labels) -> np.ndarray:
        """True where the projection is negative (``matrix_a`` side)."""
        X = np.asarray(instances, dtype=np.float64)
        y = np.asarray(labels)
        proj = np.einsum("nd,nd->n", X - self.means[y], self.components[y])
        return proj < 0

    def columns(self, instances, labels):
        y = np.asarray(labels)
        neg = self.side(instances, y)
        alt = np.where(neg[:, None], self.matrix_a.entries[:, y].T, self.matrix_b.entries[:, y].T)
        keep = np.zeros_like(alt)
        keep[np.arange(y.size), y] = 1.0
        return (1.0 - self.eta) * keep + self.eta * alt


def build_pca_split_field(features, labels, eta: float, matrix_a: TransitionMatrix | None = None,
                          matrix_b: TransitionMatrix | None = None, c: int | None = None) -> PcaSplitNoise:
    _check_rate(eta)
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    c = int(c if c is not None else (matrix_a.c if matrix_a is not None else y.max() + 1))
    if matrix_a is None:
        matrix_a = build_symmetric(c, 1.0)
    if matrix_b is None:
        groups = [g for g in MNIST_GROUPS if max(g) < c]
        matrix_b = build_subset_symmetric(c, groups, 1.0)
    means = np.zeros((c, X.shape[1]))
    comps = np.zeros((c, X.shape[1]))
    for k in range(c):
        Xk = X[y == k]
        if len(Xk) < 2:
            raise DegenerateGeometryError(f"class {k} has {len(Xk)} samples; need at least 2")
        means[k] = Xk.mean(axis=0)
        centred = Xk - means[k]
        if not np.any(np.abs(centred) > 0):
            raise DegenerateGeometryError(f"class {k} has zero variance")
        comps[k] = _power_iteration(centred, seed=k)
    return PcaSplitNoise(means, comps, eta, matrix_a, matrix_b)


class ClassifierInducedNoise(NoiseField):
    """With probability ``eta`` the label becomes the predictor's output at ``x``."""

    kind = NoiseKind.CLASSIFIER_INDUCED

    def __init__(self, predictor, eta: float, c: int):
        _check_rate(eta)
        self.predictor = predictor
        self.eta = float(eta)
        self.c = int(c)

    def _predict(self, instances):
        from .estimators import plugin_predict

        return plugin_predict(self.predictor, instances)

    def columns(self, instances, labels):
        y = np.asarray(labels)
        pred = self._predict(instances)
        cols = np.zeros((y.size, self.c))
        cols[np.arange(y.size), y] += 1.0 - self.eta
        cols[np.arange(y.size), pred] += self.eta
        return cols

    def predictor_accuracy(self, instances, labels) -> float:
        y = np.asarray(labels)
        return float(np.mean(self._predict(instances) == y)) if y.size else float("nan")


def build_classifier_induced_field(predictor, eta: float, c: int) -> ClassifierInducedNoise:
    return ClassifierInducedNoise(predictor, eta, c)


__all__ = [
    "TransitionMatrix", "NoiseField", "UniformNoise", "PcaSplitNoise", "ClassifierInducedNoise",
    "NoiseKind", "NoiseTaxonomyReport", "build_symmetric", "symmetric_injection", "build_circular",
    "build_pairwise", "build_asym_mnist", "build_superclass_circular", "build_subset_symmetric",
    "ternary_asymmetric", "FIVE_CLASS_T", "PERM_SYMMETRIC_T", "CIFAR10_PAIRS", "MNIST_GROUPS",
    "is_class_preserving_at", "taxonomy", "class_preserving_threshold", "apply_noise",
    "build_pca_split_field", "build_classifier_induced_field",
]
