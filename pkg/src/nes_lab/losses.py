"""Training losses, their gradients, and transition-matrix corrections.

All functions are batched: ``Q`` is ``(n, c)`` with rows on the simplex and
``y`` holds ``n`` integer labels.  Scalar helpers :func:`loss` and
:func:`loss_gradient` wrap the batched forms for a single point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import CorrectionUnavailableError, DomainError, NotDifferentiableError
from .noise import TransitionMatrix

MAX_CONDITION = 1e12


class LossKind(str, enum.Enum):
    CE = "CE"
    MSE = "MSE"
    GCE = "GCE"
    SCE = "SCE"
    FCE = "FCE"
    BCE = "BCE"
    ZERO_ONE = "ZeroOne"


BASE_KINDS = (LossKind.CE, LossKind.MSE, LossKind.GCE, LossKind.SCE)


@dataclass(frozen=True)
class LossSpec:
    """A loss and its hyperparameters.

    ``rho`` is the GCE exponent; ``alpha``/``beta`` weight the CE and
    reverse-CE terms of SCE and ``clip`` is the log value substituted for
    ``log 0`` in reverse CE.  FCE and BCE apply ``matrix`` to the ``base`` loss.
    """

    kind: LossKind | str = LossKind.CE
    rho: float = 0.7
    alpha: float = 1.0
    beta: float = 1.0
    clip: float = -4.0
    matrix: TransitionMatrix | None = None
    base: LossKind | str = LossKind.CE
    _inv_t: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "base", LossKind(self.base))
        if not 0.0 < self.rho <= 1.0:
            raise DomainError(f"GCE rho must lie in (0, 1], got {self.rho}")
        if self.alpha < 0 or self.beta < 0:
            raise DomainError("SCE weights must be nonnegative")
        if self.kind in (LossKind.FCE, LossKind.BCE):
            if self.matrix is None:
                raise DomainError(f"{self.kind.value} needs a transition matrix")
            if self.base not in BASE_KINDS:
                raise DomainError(f"correction base must be one of {[k.value for k in BASE_KINDS]}")
        if self.kind is LossKind.BCE:
            cond = condition_number(self.matrix)
            if not cond <= MAX_CONDITION:
                raise CorrectionUnavailableError(
                    f"transition matrix condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
            object.__setattr__(self, "_inv_t", np.linalg.inv(self.matrix.entries.T))

    @property
    def base_spec(self) -> "LossSpec":
        return LossSpec(self.base, self.rho, self.alpha, self.beta, self.clip)

    def describe(self) -> str:
        parts = [f"kind={self.kind.value}"]
        k = self.base if self.kind in (LossKind.FCE, LossKind.BCE) else self.kind
        if self.kind in (LossKind.FCE, LossKind.BCE):
            parts.append(f"base={k.value}")
        if k is LossKind.GCE:
            parts.append(f"rho={self.rho:g}")
        if k is LossKind.SCE:
            parts.append(f"alpha={self.alpha:g} beta={self.beta:g} A={self.clip:g}")
        if self.matrix is not None:
            flat = ";".join(",".join(format(v, ".6g") for v in row) for row in self.matrix.entries)
            parts.append(f"matrix={flat}")
        return " ".join(parts)


def condition_number(T) -> float:
    return float(np.linalg.cond(np.asarray(T)))


def forward_correct(base: LossSpec, T: TransitionMatrix) -> LossSpec:
    """Score ``T @ q`` with the base loss."""
    return LossSpec(LossKind.FCE, base.rho, base.alpha, base.beta, base.clip, T, base.kind)


def backward_correct(base: LossSpec, T: TransitionMatrix) -> LossSpec:
    """Score the noisy label with ``inv(T.T) @ [base(q, k) for k]``.

    Under the column convention this makes the expected corrected loss over
    noisy labels equal the expected base loss over clean labels.
    """
    return LossSpec(LossKind.BCE, base.rho, base.alpha, base.beta, base.clip, T, base.kind)


def _rows(y, n):
    return np.arange(n), np.asarray(y, dtype=np.int64)


def _all_labels(spec: LossSpec, Q):
    """Base loss of every row against every label, shape ``(n, c)``."""
    n, c = Q.shape
    out = np.empty((n, c))
    for k in range(c):
        out[:, k] = _base_values(spec, Q, np.full(n, k))
    return out


def _all_label_grads(spec: LossSpec, Q):
    n, c = Q.shape
    out = np.empty((c, n, c))
    for k in range(c):
        out[k] = _base_grads(spec, Q, np.full(n, k))
    return out


def _base_values(spec: LossSpec, Q, y):
    kind = spec.kind
    r, y = _rows(y, Q.shape[0])
    qy = Q[r, y]
    if kind is LossKind.CE:
        with np.errstate(divide="ignore"):
            return -np.log(qy)
    if kind is LossKind.MSE:
        diff = Q.copy()
        diff[r, y] -= 1.0
        return np.sum(diff * diff, axis=1)
    if kind is LossKind.GCE:
        return (1.0 - np.power(qy, spec.rho)) / spec.rho
    if kind is LossKind.SCE:
        with np.errstate(divide="ignore"):
            ce = -np.log(qy)
        # reverse CE: log of the one-hot target, with log 0 replaced by A
        rce = -spec.clip * (Q.sum(axis=1) - qy)
        return spec.alpha * ce + spec.beta * rce
    raise DomainError(f"{kind} is not a base loss")


def _base_grads(spec: LossSpec, Q, y):
    kind = spec.kind
    r, y = _rows(y, Q.shape[0])
    G = np.zeros_like(Q)
    qy = Q[r, y]
    if kind is LossKind.CE:
        with np.errstate(divide="ignore"):
            G[r, y] = -1.0 / qy
    elif kind is LossKind.MSE:
        G = 2.0 * Q
        G[r, y] -= 2.0
    elif kind is LossKind.GCE:
        with np.errstate(divide="ignore"):
            G[r, y] = -np.power(qy, spec.rho - 1.0)
    elif kind is LossKind.SCE:
        G[:] = -spec.beta * spec.clip
        with np.errstate(divide="ignore"):
            G[r, y] = -spec.alpha / qy
    else:
        raise DomainError(f"{kind} is not a base loss")
    return G


def loss_values(spec: LossSpec, Q, y) -> np.ndarray:
    """Per-row loss values."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    c = Q.shape[1]
    if y.size and (y.min() < 0 or y.max() >= c):
        raise DomainError(f"labels must lie in 0..{c - 1}")
    kind = spec.kind
    if kind in BASE_KINDS:
        return _base_values(spec, Q, y)
    if kind is LossKind.ZERO_ONE:
        return (np.argmax(Q, axis=1) != y).astype(np.float64)
    if kind is LossKind.FCE:
        return _base_values(spec.base_spec, Q @ spec.matrix.entries.T, y)
    if kind is LossKind.BCE:
        L = _all_labels(spec.base_spec, Q)
        M = spec._inv_t[y]  # row y~ of inv(T.T), one per instance
        with np.errstate(invalid="ignore"):
            out = np.einsum("nk,nk->n", M, L)
        # an infinite base loss with a zero weight contributes nothing
        bad = ~np.isfinite(out)
        if np.any(bad):
            out[bad] = np.where(M[bad] != 0, M[bad] * L[bad], 0.0).sum(axis=1)
        return out
    raise DomainError(f"unknown loss {kind}")


def loss_gradients(spec: LossSpec, Q, y) -> np.ndarray:
    """Per-row gradient with respect to the probability vector."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    kind = spec.kind
    if kind is LossKind.ZERO_ONE:
        raise NotDifferentiableError("the 0-1 loss has no useful gradient")
    if kind in BASE_KINDS:
        return _base_grads(spec, Q, y)
    T = spec.matrix.entries
    if kind is LossKind.FCE:
        return _base_grads(spec.base_spec, Q @ T.T, y) @ T
    if kind is LossKind.BCE:
        grads = _all_label_grads(spec.base_spec, Q)  # (k, n, c)
        M = spec._inv_t[y]
        return np.einsum("nk,knc->nc", M, grads)
    raise DomainError(f"unknown loss {kind}")


def loss(spec: LossSpec, q, label: int) -> float:
    return float(loss_values(spec, np.asarray(q)[None, :], [label])[0])


def loss_gradient(spec: LossSpec, q, label: int) -> np.ndarray:
    return loss_gradients(spec, np.asarray(q)[None, :], [label])[0]


def softmax(Z):
    Z = np.asarray(Z, dtype=np.float64)
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def log_softmax(Z):
    Z = np.asarray(Z, dtype=np.float64)
    Z = Z - Z.max(axis=1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))


def values_and_logit_grads(spec: LossSpec, Z, y):
    """Loss values and gradients with respect to softmax logits ``Z``.

    CE and CE-based backward correction go through the log-softmax so that
    saturated outputs stay finite; other losses use the softmax Jacobian.
    """
    y = np.asarray(y, dtype=np.int64)
    n, c = Z.shape
    r = np.arange(n)
    Q = softmax(Z)
    if spec.kind is LossKind.CE:
        values = -log_softmax(Z)[r, y]
        dZ = Q.copy()
        dZ[r, y] -= 1.0
        return values, dZ
    if spec.kind is LossKind.BCE and spec.base is LossKind.CE:
        M = spec._inv_t[y]
        values = np.einsum("nk,nk->n", M, -log_softmax(Z))
        dZ = M.sum(axis=1, keepdims=True) * Q - M
        return values, dZ
    values = loss_values(spec, Q, y)
    G = loss_gradients(spec, Q, y)
    dZ = Q * (G - np.sum(Q * G, axis=1, keepdims=True))
    return values, dZ
