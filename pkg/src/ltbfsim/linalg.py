"""Dense complex matrix kernels.

Matrices are plain ``complex128`` numpy arrays.  Products are routed through
:func:`matmul`, which applies an arithmetic profile and reports its work to
the flop tally.  Eigen-decompositions, square roots and subspace selection
always run in float64.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from . import flops
from .arith import FP64, AccumulatorPolicy, ArithmeticProfile, Kind, \
    qmul_array, quantize

__all__ = [
    "LinalgError", "NotPSDError", "matmul", "hermitian_eig", "jacobi_eig",
    "sqrtm_psd", "invsqrtm_psd", "top_r_right_singular", "condition_number",
    "hermitize", "normalize_phase", "row_space_angle", "save_matrix",
    "load_matrix", "dumps_matrix", "loads_matrix", "write_csv", "read_csv",
]

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10


class LinalgError(ValueError):
    pass


class NotPSDError(LinalgError):
    pass


def hermitize(a):
    a = np.asarray(a, dtype=np.complex128)
    return 0.5 * (a + a.conj().T)


def _check_hermitian(a, tol=HERMITIAN_TOL):
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LinalgError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LinalgError("matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.conj().T), initial=0.0) > tol * max(scale, 1e-300):
        raise LinalgError("matrix is not Hermitian within tolerance")
    return hermitize(a)


def matmul(a, b, p: ArithmeticProfile = FP64,
           acc: AccumulatorPolicy = AccumulatorPolicy.WIDE, label="matmul"):
    """Matrix product under profile ``p``.

    Each output entry is an inner product evaluated with the accumulator
    policy ``acc``.  Adds ``rows * cols * inner`` to the flop tally.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise LinalgError(f"cannot multiply {a.shape} by {b.shape}")
    flops.add(a.shape[0] * b.shape[1] * a.shape[1], label)
    if acc is AccumulatorPolicy.WIDE or p.kind is Kind.FP64:
        out = quantize(a @ b, p)
    else:
        out = np.zeros((a.shape[0], b.shape[1]), dtype=np.complex128)
        for k in range(a.shape[1]):
            out = quantize(out + qmul_array(a[:, k:k + 1], b[k:k + 1, :], p),
                           p)
    return out[:, 0] if vec else out


# ---------------------------------------------------------------------------
# eigen-decomposition
# ---------------------------------------------------------------------------

def normalize_phase(v, tol=1e-12):
    """Rotate each column so its first non-negligible entry is real positive."""
    v = np.array(v, dtype=np.complex128, copy=True)
    if v.ndim == 1:
        return normalize_phase(v[:, None], tol)[:, 0]
    for j in range(v.shape[1]):
        col = v[:, j]
        mags = np.abs(col)
        big = np.nonzero(mags > tol * max(mags.max(initial=0.0), 1e-300))[0]
        if big.size:
            z = col[big[0]]
            v[:, j] = col * (np.conj(z) / abs(z))
    return v


def jacobi_eig(a, tol=1e-14, max_sweeps=60):
    """Cyclic complex Jacobi eigen-solver for Hermitian ``a``.

    Returns unsorted eigenvalues and eigenvectors (as columns).
    """
    a = np.array(a, dtype=np.complex128, copy=True)
    n = a.shape[0]
    v = np.eye(n, dtype=np.complex128)
    norm = np.linalg.norm(a)
    if n < 2 or norm == 0.0:
        return np.real(np.diag(a)).copy(), v
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-300 or mag <= 1e-18 * norm:
                    continue
                ph = apq / mag
                app, aqq = a[p, p].real, a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau)
                                                   + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                # U = diag(1, conj(ph)) @ [[c, s], [-s, c]]
                u = np.array([[c, s], [-s * np.conj(ph), c * np.conj(ph)]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ u
                a[idx, :] = u.conj().T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                v[:, idx] = v[:, idx] @ u
    return np.real(np.diag(a)).copy(), v


def hermitian_eig(a, backend="lapack"):
    """Eigen-decomposition of a Hermitian matrix.

    Parameters
    ----------
    a : (N, N) array_like
        Hermitian to within ``1e-12`` of its largest entry.
    backend : {"lapack", "jacobi"}

    Returns
    -------
    values : (N,) ndarray
        Real eigenvalues in descending order.
    vectors : (N, N) ndarray
        Orthonormal eigenvectors as columns, phase-normalized.
    """
    a = _check_hermitian(a)
    if a.shape[0] > 4096:
        raise LinalgError("hermitian_eig limited to dimension 4096")
    if backend == "lapack":
        w, v = np.linalg.eigh(a)
    elif backend == "jacobi":
        w, v = jacobi_eig(a)
    else:
        raise ValueError(f"unknown eigen backend {backend!r}")
    order = np.argsort(-w, kind="stable")
    return w[order], normalize_phase(v[:, order])


def _psd_eig(a):
    w, v = hermitian_eig(a)
    lam_max = max(w[0], 0.0) if w.size else 0.0
    if w.size and w[-1] < -PSD_TOL * max(lam_max, 1e-300):
        raise NotPSDError(f"eigenvalue {w[-1]:.3e} below PSD tolerance")
    return w, v


def sqrtm_psd(a):
    """Principal square root of a PSD matrix."""
    w, v = _psd_eig(a)
    return hermitize((v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T)


def invsqrtm_psd(a, eig_floor=None):
    """Inverse principal square root with eigenvalues floored at ``eig_floor``.

    ``eig_floor`` defaults to ``1e-6 * lambda_max``.
    """
    w, v = _psd_eig(a)
    if eig_floor is None:
        eig_floor = 1e-6 * max(w[0], 1e-300)
    w = np.maximum(w, eig_floor)
    return hermitize((v / np.sqrt(w)) @ v.conj().T)


def top_r_right_singular(b, r):
    """The ``r`` dominant right singular vectors of ``b`` as rows.

    Computed from the eigen-decomposition of ``b^H b``.
    """
    b = np.asarray(b, dtype=np.complex128)
    if not 1 <= r <= b.shape[1]:
        raise LinalgError(f"r={r} out of range for {b.shape[1]} columns")
    gram = b.conj().T @ b
    _, v = hermitian_eig(hermitize(gram))
    return v[:, :r].conj().T


def condition_number(a):
    """``lambda_max / lambda_min``; ``inf`` when ``lambda_min <= 0``."""
    w, _ = hermitian_eig(a)
    if w[-1] <= 0:
        return float("inf")
    return float(w[0] / w[-1])


def row_space_angle(g1, g2):
    """Largest principal angle (radians) between the row spaces of two matrices."""
    q1, _ = np.linalg.qr(np.asarray(g1, dtype=np.complex128).conj().T)
    q2, _ = np.linalg.qr(np.asarray(g2, dtype=np.complex128).conj().T)
    if q1.shape[1] != q2.shape[1]:
        raise LinalgError("row spaces have different dimensions")
    # arcsin of the residual is accurate near zero where arccos is not
    resid = q2 - q1 @ (q1.conj().T @ q2)
    return float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------
#
# Blob layout, little-endian:
#   bytes 0-3   magic b"CMAT"
#   bytes 4-11  rows (uint64)
#   bytes 12-19 cols (uint64)
#   then rows*cols pairs of float64 (re, im), row-major.

_MAGIC = b"CMAT"
_HEADER = struct.Struct("<4sQQ")


def dumps_matrix(a) -> bytes:
    a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
    if a.ndim != 2:
        raise LinalgError("only 2-D matrices serialize")
    body = np.ascontiguousarray(a).view(np.float64).astype("<f8").tobytes()
    return _HEADER.pack(_MAGIC, a.shape[0], a.shape[1]) + body


def loads_matrix(blob: bytes, offset: int = 0):
    """Decode one matrix; returns ``(matrix, next_offset)``."""
    magic, rows, cols = _HEADER.unpack_from(blob, offset)
    if magic != _MAGIC:
        raise LinalgError("bad matrix blob magic")
    start = offset + _HEADER.size
    count = rows * cols * 2
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
    mat = data.astype(np.float64).view(np.complex128).reshape(rows, cols)
    return mat.copy(), start + count * 8


def save_matrix(path, a):
    Path(path).write_bytes(dumps_matrix(a))


def load_matrix(path):
    return loads_matrix(Path(path).read_bytes())[0]


def write_csv(path, a):
    """Write ``re,im`` pairs, one matrix row per CSV row."""
    a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in a:
            w.writerow([f"{v:.17g}" for z in row for v in (z.real, z.imag)])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = [[float(x) for x in r] for r in csv.reader(fh) if r]
    arr = np.array(rows, dtype=np.float64)
    return arr[:, 0::2] + 1j * arr[:, 1::2]
