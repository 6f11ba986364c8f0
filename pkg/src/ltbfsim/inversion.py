"""Approximate inverses of Hermitian positive definite matrices.

Two hardware-oriented schemes are provided, both evaluated under an
arithmetic profile:

* conjugate gradient with a fixed iteration count, solving ``Q X = I``
  column by column from ``X0 = 0``;
* a scaled Neumann series ``c * sum_{j<=d} (I - cQ)^j`` evaluated by Horner's
  rule.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import flops
from .arith import FP64, AccumulatorPolicy, ArithmeticDomainError, \
    ArithmeticProfile, Kind, profile as parse_profile, qmul_array, quantize
from .linalg import hermitian_eig, hermitize, matmul

__all__ = ["InversionSpec", "InversionStatus", "cg_solve", "cg_inverse",
           "cg_inverse_history", "poly_inverse", "approx_inverse",
           "neumann_scale", "EIG_FLOOR"]

EIG_FLOOR = 1e-9


@dataclass(frozen=True)
class InversionSpec:
    """Method, order and precision of an inverse approximation.

    ``method`` is ``"exact"``, ``"cg"`` (``order`` = iterations) or
    ``"poly"`` (``order`` = series degree).
    """
    method: str = "exact"
    order: int = 0
    profile: ArithmeticProfile = FP64
    scaling: str = "spectral"
    acc: AccumulatorPolicy = AccumulatorPolicy.WIDE

    def __post_init__(self):
        if self.method not in ("exact", "cg", "poly"):
            raise ValueError(f"unknown inversion method {self.method!r}")
        if self.method != "exact" and self.order < 1:
            raise ValueError(f"{self.method} needs order >= 1")
        if self.scaling not in ("spectral", "trace"):
            raise ValueError(f"unknown scaling {self.scaling!r}")

    @property
    def label(self) -> str:
        if self.method == "exact":
            return "exact"
        return f"{self.method}:{self.order}"

    @classmethod
    def parse(cls, method: str, precision="fp64", scaling="spectral",
              acc="wide") -> "InversionSpec":
        """Build from CLI-style strings such as ``"cg:4"`` and ``"q15.16"``."""
        m = re.fullmatch(r"\s*(exact|cg|poly)(?::(\d+))?\s*", method.lower())
        if m is None:
            raise ValueError(f"cannot parse method {method!r}")
        order = int(m.group(2)) if m.group(2) else 0
        return cls(m.group(1), order, parse_profile(precision), scaling,
                   AccumulatorPolicy(acc))


@dataclass
class InversionStatus:
    flags: set = field(default_factory=set)
    flops: int = 0
    column_status: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.flags & {"stagnation", "divergence", "overflow"})

    def describe(self) -> str:
        return "+".join(sorted(self.flags)) if self.flags else "ok"


# ---------------------------------------------------------------------------
# conjugate gradient
# ---------------------------------------------------------------------------

def _coldot(x, y, p, acc):
    """Per-column ``x^H y`` under ``p``."""
    flops.add(x.size, "cg_dot")
    if acc is AccumulatorPolicy.WIDE or p.kind is Kind.FP64:
        return quantize(np.einsum("ij,ij->j", x.conj(), y), p)
    total = np.zeros(x.shape[1], dtype=np.complex128)
    for i in range(x.shape[0]):
        total = quantize(total + qmul_array(x[i].conj(), y[i], p), p)
    return total


def _axpy(y, a, x, p, acc):
    """``y + a * x`` with per-column scalars ``a``."""
    flops.add(x.size, "cg_axpy")
    if acc is AccumulatorPolicy.WIDE or p.kind is Kind.FP64:
        return quantize(y + a[None, :] * x, p)
    return quantize(y + qmul_array(a[None, :], x, p), p)


def _cg_batch(q, b, k, p, acc, keep_history=False):
    """Run ``k`` CG iterations on every column of ``b`` simultaneously.

    Returns the final iterate, per-column status strings and, optionally,
    the list of iterates after each iteration.
    """
    n, ncol = b.shape
    qq = quantize(q, p)
    x = np.zeros((n, ncol), dtype=np.complex128)
    r = quantize(b, p)
    d = r.copy()
    rr = _coldot(r, r, p, acc)
    status = np.array(["running"] * ncol, dtype=object)
    history = []
    for _ in range(k):
        active = status == "running"
        conv = active & (rr == 0)
        status[conv] = "converged"
        active &= ~conv
        if not active.any():
            if keep_history:
                history.append((x.copy(), flops.current_total(),
                                "stagnation" in status))
            continue
        qd = matmul(qq, d, p, acc, label="cg_matvec")
        curv = _coldot(d, qd, p, acc)
        stall = active & (curv == 0)
        status[stall] = "stagnation"
        active &= ~stall
        alpha = np.zeros(ncol, dtype=np.complex128)
        alpha[active] = quantize(rr[active] / curv[active], p)
        x = _axpy(x, alpha, d, p, acc)
        r_new = _axpy(r, -alpha, qd, p, acc)
        r = np.where(active[None, :], r_new, r)
        rr_new = _coldot(r, r, p, acc)
        beta = np.zeros(ncol, dtype=np.complex128)
        beta[active] = quantize(rr_new[active] / rr[active], p)
        d = np.where(active[None, :], _axpy(r, beta, d, p, acc), d)
        rr = np.where(active, rr_new, rr)
        if keep_history:
            history.append((x.copy(), flops.current_total(),
                            "stagnation" in status))
    status[status == "running"] = "ok"
    return x, list(status), history


def cg_solve(q, b, k, p: ArithmeticProfile = FP64,
             acc=AccumulatorPolicy.WIDE):
    """Solve ``q x = b`` with exactly ``k`` CG iterations from ``x0 = 0``.

    Returns ``(x, status)`` where ``status`` is ``"ok"``, ``"converged"``
    (the residual hit exact zero) or ``"stagnation"`` (the quantized
    curvature ``d^H q d`` vanished; the current iterate is returned).
    """
    b = np.asarray(b, dtype=np.complex128)
    x, st, _ = _cg_batch(np.asarray(q, dtype=np.complex128), b[:, None], k,
                         p, acc)
    return x[:, 0], st[0]


def _status_from_columns(cols, tally):
    st = InversionStatus(flops=tally.total, column_status=cols)
    if "stagnation" in cols:
        st.flags.add("stagnation")
    return st


def cg_inverse(q, k, p: ArithmeticProfile = FP64,
               acc=AccumulatorPolicy.WIDE):
    """Column-by-column CG inverse, symmetrized. Returns ``(X, status)``."""
    q = np.asarray(q, dtype=np.complex128)
    with flops.counting() as tally:
        try:
            x, cols, _ = _cg_batch(q, np.eye(q.shape[0], dtype=np.complex128),
                                   k, p, acc)
        except ArithmeticDomainError:
            st = InversionStatus({"overflow"}, tally.total)
            return np.full(q.shape, np.nan, dtype=np.complex128), st
    return hermitize(x), _status_from_columns(cols, tally)


def cg_inverse_history(q, k_max, p: ArithmeticProfile = FP64,
                       acc=AccumulatorPolicy.WIDE):
    """Symmetrized CG inverses after 1..k_max iterations.

    Because CG from a fixed start is a prefix computation, iterate ``k`` of
    a ``k_max`` run equals the result of a ``k``-iteration run.  Returns a
    list of ``(X_k, status_k)``; flops are cumulative.
    """
    q = np.asarray(q, dtype=np.complex128)
    n = q.shape[0]
    with flops.counting() as tally:
        try:
            _, _, hist = _cg_batch(q, np.eye(n, dtype=np.complex128), k_max,
                                   p, acc, keep_history=True)
        except ArithmeticDomainError:
            nan = np.full(q.shape, np.nan, dtype=np.complex128)
            return [(nan, InversionStatus({"overflow"}, tally.total))
                    for _ in range(k_max)]
    out = []
    for xk, used, stalled in hist:
        st = InversionStatus({"stagnation"} if stalled else set(), used)
        out.append((hermitize(xk), st))
    return out


# ---------------------------------------------------------------------------
# Neumann polynomial
# ---------------------------------------------------------------------------

def neumann_scale(q, scaling="spectral"):
    """Scale ``c`` and the FP64 spectral radius of ``I - cQ``."""
    w, _ = hermitian_eig(q)
    if scaling == "spectral":
        c = 2.0 / (w[0] + w[-1])
    elif scaling == "trace":
        c = 1.0 / float(np.real(np.trace(q)))
    else:
        raise ValueError(f"unknown scaling {scaling!r}")
    rho = float(np.max(np.abs(1.0 - c * w)))
    return c, rho


def poly_inverse(q, d, p: ArithmeticProfile = FP64, scaling="spectral",
                 acc=AccumulatorPolicy.WIDE):
    """Neumann-series inverse of degree ``d``.  Returns ``(A, status)``.

    Horner evaluation ``X <- I + T X`` with ``T = I - cQ`` needs ``d - 1``
    matrix products.
    """
    q = np.asarray(q, dtype=np.complex128)
    n = q.shape[0]
    c, rho = neumann_scale(q, scaling)
    eye = np.eye(n, dtype=np.complex128)
    with flops.counting() as tally:
        try:
            cq = quantize(c, p)
            flops.add(n * n, "poly_scale")
            t = quantize(eye - qmul_array(cq, quantize(q, p), p), p)
            x = quantize(eye + t, p)
            for _ in range(d - 1):
                x = quantize(eye + matmul(t, x, p, acc, label="poly_matmul"),
                             p)
            flops.add(n * n, "poly_scale")
            a = qmul_array(cq, x, p)
        except ArithmeticDomainError:
            return (np.full(q.shape, np.nan, dtype=np.complex128),
                    InversionStatus({"overflow"}, tally.total))
    st = InversionStatus(flops=tally.total)
    if rho >= 1.0:
        st.flags.add("divergence")
    return hermitize(a), st


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def floor_eigenvalues(a, floor=EIG_FLOOR):
    """Symmetrize ``a`` and lift eigenvalues below ``floor`` up to it."""
    a = hermitize(a)
    w, v = hermitian_eig(a)
    if w[-1] >= floor:
        return a, False
    w = np.maximum(w, floor)
    return hermitize((v * w) @ v.conj().T), True


def approx_inverse(q, spec: InversionSpec):
    """Dispatch on ``spec``; returns ``(A, status)`` with ``A`` PSD-floored."""
    q = np.asarray(q, dtype=np.complex128)
    if spec.method == "exact":
        n = q.shape[0]
        a = np.linalg.solve(q, np.eye(n, dtype=np.complex128))
        st = InversionStatus(flops=n ** 3)
    elif spec.method == "cg":
        a, st = cg_inverse(q, spec.order, spec.profile, spec.acc)
    else:
        a, st = poly_inverse(q, spec.order, spec.profile, spec.scaling,
                             spec.acc)
    return finalize_inverse(a, st)


def finalize_inverse(a, st: InversionStatus):
    """Symmetrize and eigenvalue-floor an approximate inverse in place of use."""
    if not np.all(np.isfinite(a)):
        st.flags.add("overflow")
        return np.eye(a.shape[0], dtype=np.complex128) * EIG_FLOOR, st
    a, floored = floor_eigenvalues(a)
    if floored:
        st.flags.add("floored")
    return a, st
