"""Long-term beamforming with optional interference subspace nulling.

For user ``i`` the projection is

    G_i = [Q_i^{1/2} Q^{-1/2}]_r Q^{-1/2},      Q = I + sum_j alpha_j Q_j + C_v

where ``[.]_r`` keeps the ``r`` dominant right singular vectors and ``C_v``
is the interferer's contribution.  With nulling enabled the interferer
basis ``H_v`` is extracted from its covariance, every user covariance is
projected onto the complement of ``span(H_v)`` and the interferer term is
dropped from ``Q``:

    G_i = [Qhat_i^{1/2} R_v^{-1/2}]_r R_v^{-1/2} P_v,    R_v = Q - C_v.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import flops
from .channel import ChannelDrop, noncoherent_interference_covariance, \
    srs_covariance, srs_subcarriers
from .inversion import InversionSpec, InversionStatus, approx_inverse
from .linalg import condition_number, hermitian_eig, hermitize, invsqrtm_psd, \
    matmul, sqrtm_psd, top_r_right_singular

__all__ = [
    "CovarianceSet", "NullingConfig", "BeamformerSet", "BeamformerDesign",
    "assemble_Q", "exact_projection", "approx_projection",
    "interference_basis", "nulling_projector", "nulled_user_covariance",
    "reduced_covariance", "estimate_covariances", "prepare_design",
    "build_beamformers", "psd_part",
]


@dataclass
class CovarianceSet:
    """Long-term statistics of one drop.

    ``Cv`` is the interferer's contribution ``alpha_v Q_v`` (noise removed);
    ``Qv`` the raw interferer covariance estimate, noise included.
    """
    Qi: list
    alpha: np.ndarray
    Q: np.ndarray
    Qv: np.ndarray | None = None
    Cv: np.ndarray | None = None
    noise_var: float = 1.0

    @property
    def n_rx(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class NullingConfig:
    enabled: bool = False
    q: int = 1
    energy_threshold: float | None = None

    def __post_init__(self):
        if self.enabled and self.q < 1:
            raise ValueError("nulling rank must be >= 1")


@dataclass
class BeamformerSet:
    G: list
    r: int
    spec: InversionSpec
    nulling: NullingConfig
    cond_Q: float
    cond_Rv: float | None = None
    q_used: int = 0
    status: InversionStatus = field(default_factory=InversionStatus)

    def provenance(self) -> dict:
        return {
            "method": self.spec.method, "order": self.spec.order,
            "precision": self.spec.profile.name,
            "scaling": self.spec.scaling,
            "accumulator": self.spec.acc.value,
            "nulling": self.nulling.enabled, "q": self.q_used, "r": self.r,
            "cond_Q": self.cond_Q, "cond_Rv": self.cond_Rv,
            "flops": self.status.flops, "status": self.status.describe(),
        }

    def to_json(self) -> str:
        doc = self.provenance()
        doc["G"] = [{"re": g.real.tolist(), "im": g.imag.tolist()}
                    for g in self.G]
        return json.dumps(doc)


def psd_part(a, floor=0.0):
    """Eigenvalue-clipped PSD part of a Hermitian matrix."""
    w, v = hermitian_eig(a)
    return hermitize((v * np.maximum(w, floor)) @ v.conj().T)


def assemble_Q(covs, alpha, Qv=None, n=None):
    """``I + sum_i alpha_i Q_i (+ Qv)`` in float64."""
    covs = list(covs)
    alpha = np.asarray(alpha, dtype=float)
    if len(covs) != alpha.size:
        raise ValueError("one SNR per user covariance required")
    if n is None:
        if covs:
            n = covs[0].shape[0]
        elif Qv is not None:
            n = Qv.shape[0]
        else:
            raise ValueError("dimension unknown for an empty assembly")
    q = np.eye(n, dtype=np.complex128)
    for a, c in zip(alpha, covs):
        if c.shape != (n, n):
            raise ValueError("covariance dimension mismatch")
        q = q + a * c
    if Qv is not None:
        if Qv.shape != (n, n):
            raise ValueError("interferer covariance dimension mismatch")
        q = q + Qv
    return hermitize(q)


def projection_from_sqrt(qi_sqrt, s, r):
    """``[Qi^{1/2} S]_r S`` given ``Qi^{1/2}`` and ``S``."""
    b = qi_sqrt @ s
    return top_r_right_singular(b, r) @ s


def exact_projection(Qi, Q, r):
    s = invsqrtm_psd(Q)
    return projection_from_sqrt(sqrtm_psd(Qi), s, r)


def approx_projection(Qi, Q, r, spec: InversionSpec):
    """LTBF projection with ``Q^{-1/2}`` taken as the root of an approximate inverse.

    Returns ``(G, status)``.
    """
    a, st = approx_inverse(Q, spec)
    return projection_from_sqrt(sqrtm_psd(Qi), sqrtm_psd(a), r), st


# ---------------------------------------------------------------------------
# nulling
# ---------------------------------------------------------------------------

def auto_nulling_rank(Qv, energy_threshold=0.99, noise_var=1.0):
    """Smallest rank capturing ``energy_threshold`` of ``(Qv - I)_+``."""
    w, _ = hermitian_eig(Qv - noise_var * np.eye(Qv.shape[0]))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return 1
    frac = np.cumsum(w) / w.sum()
    return int(np.searchsorted(frac, energy_threshold) + 1)


def interference_basis(Qv, q, noise_var=1.0):
    """Rank-``q`` factor ``H_v`` with ``(Qv - I)_+ ~ H_v H_v^H``.

    Returns ``(H_v, warning)``; ``warning`` is set when ``q`` exceeds the
    numerical rank and weak eigen-directions had to be padded in.
    """
    n = Qv.shape[0]
    if not 1 <= q < n:
        raise ValueError(f"nulling rank {q} outside [1, {n})")
    w, v = hermitian_eig(Qv - noise_var * np.eye(n))
    w = np.clip(w[:q], 0.0, None)
    warn = None
    tiny = 1e-12 * max(w[0], 1e-300)
    if w[-1] <= tiny:
        warn = "rank-padded"
        w = np.maximum(w, max(tiny, 1e-300))
    return v[:, :q] * np.sqrt(w), warn


def nulling_projector(Hv):
    """``P_v = I - H_v M H_v^H`` with ``M = (H_v^H H_v)^{-1}``.

    Returns ``(P_v, M, warning)``.
    """
    hv = np.asarray(Hv, dtype=np.complex128)
    n, q = hv.shape
    gram = matmul(hv.conj().T, hv, label="null_gram")
    warn = None
    if np.linalg.cond(gram) > 1e12:
        warn = "regularized"
        gram = gram + 1e-12 * np.real(np.trace(gram)) / q * np.eye(q)
    m = hermitize(np.linalg.inv(gram))
    hm = matmul(hv, m, label="null_proj")
    p = np.eye(n) - matmul(hm, hv.conj().T, label="null_proj")
    return hermitize(p), m, warn


def nulled_user_covariance(Qi, Hv, M):
    """``P_v Q_i P_v^H`` through the four-term expansion.

    Only ``N x q`` products are formed, so the cost is ``O(q N^2)``.
    """
    qi = np.asarray(Qi, dtype=np.complex128)
    hv = np.asarray(Hv, dtype=np.complex128)
    # products with an N x N output carry the q N^2 cost; the rest are q^2 N
    qh = matmul(qi, hv, label="nulled_cov")                  # Q_i H_v
    hm = matmul(hv, M, label="nulled_cov_minor")             # H_v M
    t1 = matmul(hm, qh.conj().T, label="nulled_cov")         # H_v M H_v^H Q_i
    core = matmul(hv.conj().T, qh, label="nulled_cov_minor")  # H_v^H Q_i H_v
    t3 = matmul(matmul(hm, core, label="nulled_cov_minor"), hm.conj().T,
                label="nulled_cov")
    return hermitize(qi - t1 - t1.conj().T + t3)


def reduced_covariance(Q, Cv, noise_var=1.0, q=None):
    """``R_v = Q - C_v`` with eigenvalues floored just below the noise level.

    Returns ``(R_v, warning)``.  ``warning`` is ``"estimation-mismatch"``
    when more than ``q`` eigenvalues needed flooring.
    """
    r = hermitize(np.asarray(Q) - np.asarray(Cv))
    floor = (1.0 - 1e-6) * noise_var
    w, v = hermitian_eig(r)
    low = int(np.sum(w < floor))
    if low == 0:
        return r, None
    r = hermitize((v * np.maximum(w, floor)) @ v.conj().T)
    warn = "estimation-mismatch" if q is not None and low > q else None
    return r, warn


# ---------------------------------------------------------------------------
# covariance estimation and beamformer construction
# ---------------------------------------------------------------------------

def estimate_covariances(drop: ChannelDrop, n_frames="config"):
    """User covariances from SRS tones and the interferer from null frames.

    ``n_frames=None`` uses the analytic interferer covariance.
    """
    cfg = drop.config
    sc = srs_subcarriers(cfg)
    h = drop.user_channels(sc)
    qi = [srs_covariance(h[i]) for i in range(drop.n_ue)]
    n = cfg.n_rx
    qv = cv = None
    if drop.interferer is not None:
        frames = cfg.n_null_frames if n_frames == "config" else n_frames
        qv = noncoherent_interference_covariance(drop, frames)
        cv = psd_part(qv - drop.noise_var * np.eye(n))
    q = assemble_Q(qi, drop.alpha, cv, n=n)
    return CovarianceSet(Qi=qi, alpha=np.asarray(drop.alpha), Q=q, Qv=qv,
                         Cv=cv, noise_var=drop.noise_var)


@dataclass
class BeamformerDesign:
    """Everything about a drop's beamformers that does not depend on the inverse.

    ``target`` is the matrix to invert (``Q`` or ``R_v``), ``user_sqrts``
    the square roots of the (possibly nulled) user covariances and
    ``projector`` the nulling projector or ``None``.
    """
    target: np.ndarray
    user_sqrts: list
    projector: np.ndarray | None
    nulling: NullingConfig
    cond_Q: float
    cond_Rv: float | None
    q_used: int = 0
    warnings: list = field(default_factory=list)
    flops: int = 0

    def beamformers(self, inv_sqrt, r):
        out = []
        for qs in self.user_sqrts:
            g = projection_from_sqrt(qs, inv_sqrt, r)
            if self.projector is not None:
                g = g @ self.projector
            out.append(g)
        return out

    def exact(self, r):
        return self.beamformers(invsqrtm_psd(self.target), r)

    def from_inverse(self, a, r):
        return self.beamformers(sqrtm_psd(a), r)


def prepare_design(covs: CovarianceSet, nulling: NullingConfig):
    cond_q = condition_number(covs.Q)
    if not nulling.enabled or covs.Cv is None:
        return BeamformerDesign(
            target=covs.Q, user_sqrts=[sqrtm_psd(c) for c in covs.Qi],
            projector=None, nulling=nulling, cond_Q=cond_q, cond_Rv=None)
    q = nulling.q
    if nulling.energy_threshold is not None:
        q = auto_nulling_rank(covs.Qv, nulling.energy_threshold,
                              covs.noise_var)
    warnings = []
    with flops.counting() as tally:
        hv, w1 = interference_basis(covs.Qv, q, covs.noise_var)
        p, m, w2 = nulling_projector(hv)
        qhat = [nulled_user_covariance(c, hv, m) for c in covs.Qi]
        rv, w3 = reduced_covariance(covs.Q, covs.Cv, covs.noise_var, q)
    warnings += [w for w in (w1, w2, w3) if w]
    return BeamformerDesign(
        target=rv, user_sqrts=[sqrtm_psd(c) for c in qhat], projector=p,
        nulling=nulling, cond_Q=cond_q, cond_Rv=condition_number(rv),
        q_used=q, warnings=warnings, flops=tally.total)


def build_beamformers(covs: CovarianceSet, r, spec: InversionSpec,
                      nulling: NullingConfig) -> BeamformerSet:
    design = prepare_design(covs, nulling)
    a, st = approx_inverse(design.target, spec)
    st.flags.update(design.warnings)
    g = design.from_inverse(a, r)
    return BeamformerSet(G=g, r=r, spec=spec, nulling=nulling,
                         cond_Q=design.cond_Q, cond_Rv=design.cond_Rv,
                         q_used=design.q_used, status=st)
