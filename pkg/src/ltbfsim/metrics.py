"""Post-beamforming MMSE equalization, SINR and capacity statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelDrop

__all__ = ["LinkMetrics", "effective_noise_covariance", "mmse_sinr",
           "evaluate_ltbf", "evaluate_mmse_baseline", "summarize",
           "capacity_from_sinr"]


@dataclass
class LinkMetrics:
    """Per-UE link quality.

    sinr : (n_ue, n_sc, n_streams) linear SINR
    capacity : (n_ue,) bits/s/Hz, averaged over subcarriers
    """
    sinr: np.ndarray
    capacity: np.ndarray

    @property
    def mean_capacity(self) -> float:
        return float(np.mean(self.capacity))

    @property
    def p10_capacity(self) -> float:
        return summarize(self.capacity)["p10"]

    def sinr_db(self):
        return 10 * np.log10(np.maximum(self.sinr, 1e-300))


def capacity_from_sinr(sinr):
    """Subcarrier-averaged ``sum_s log2(1 + SINR_s)`` over the last two axes."""
    return np.mean(np.sum(np.log2(1.0 + sinr), axis=-1), axis=-1)


def effective_noise_covariance(G, others, other_power, hv=None, alpha_v=0.0,
                               noise_var=1.0):
    """Noise-plus-interference covariance after projection by ``G``.

    Parameters
    ----------
    G : (r, N) projection
    others : (J, n_sc, N, S) channels of the co-scheduled users
    other_power : (J,) per-stream transmit power of each of them
    hv : (n_sc, N) interferer channel, optional
    alpha_v : float
        Interferer power.

    Returns
    -------
    (n_sc, r, r) ndarray
    """
    g = np.asarray(G, dtype=np.complex128)
    others = np.asarray(others, dtype=np.complex128)
    if others.ndim != 4:
        raise ValueError("others must have shape (J, n_sc, N, S)")
    n_sc = others.shape[1] if others.shape[0] else (
        hv.shape[0] if hv is not None else 1)
    c = np.broadcast_to(noise_var * (g @ g.conj().T),
                        (n_sc,) + (g.shape[0],) * 2).copy()
    if others.shape[0]:
        gh = np.einsum("rn,jkns->jkrs", g, others)
        w = np.asarray(other_power, dtype=float)[:, None, None, None]
        c += np.einsum("jkrs,jkts->krt", w * gh, gh.conj())
    if hv is not None and alpha_v:
        gv = np.asarray(hv) @ g.T                          # (n_sc, r)
        c += alpha_v * gv[:, :, None] * gv[:, None, :].conj()
    return 0.5 * (c + np.swapaxes(c, -1, -2).conj())


def mmse_sinr(h_eff, C, stream_power):
    """Per-stream SINR of the linear MMSE equalizer.

    ``SINR_s = 1 / [(I + P H^H C^{-1} H)^{-1}]_{ss} - 1`` with ``P`` the
    per-stream transmit power.  Works on stacked leading axes.
    """
    h = np.asarray(h_eff, dtype=np.complex128)
    c = np.asarray(C, dtype=np.complex128)
    if np.any(np.linalg.cond(c) > 1e15):
        raise np.linalg.LinAlgError("singular noise covariance")
    ns = h.shape[-1]
    ci_h = np.linalg.solve(c, h)
    gram = np.swapaxes(h.conj(), -1, -2) @ ci_h
    e = np.linalg.inv(np.eye(ns) + stream_power * gram)
    mse = np.real(np.diagonal(e, axis1=-2, axis2=-1))
    return np.maximum(1.0 / mse - 1.0, 0.0)


def _evaluate(drop: ChannelDrop, projections, subcarriers=None):
    h = drop.user_channels(subcarriers)               # (U, n_sc, N, S)
    hv = drop.interferer_channel(subcarriers) if drop.interferer else None
    n_ue = h.shape[0]
    power = np.asarray(drop.alpha, dtype=float)
    sinr = []
    for i in range(n_ue):
        g = projections[i]
        others = np.delete(h, i, axis=0)
        c = effective_noise_covariance(g, others, np.delete(power, i), hv,
                                       drop.alpha_v, drop.noise_var)
        h_eff = np.einsum("rn,kns->krs", g, h[i])
        sinr.append(mmse_sinr(h_eff, c, power[i]))
    sinr = np.array(sinr)
    return LinkMetrics(sinr=sinr, capacity=capacity_from_sinr(sinr))


def evaluate_ltbf(drop_at_eval: ChannelDrop, G, subcarriers=None):
    """Reduced-dimension MMSE link metrics for projections ``G`` (one per UE)."""
    if len(G) != drop_at_eval.n_ue:
        raise ValueError("one projection per UE required")
    return _evaluate(drop_at_eval, G, subcarriers)


def evaluate_mmse_baseline(drop_at_eval: ChannelDrop, subcarriers=None):
    """Full-dimension instantaneous MMSE, the unprojected benchmark."""
    eye = np.eye(drop_at_eval.config.n_rx, dtype=np.complex128)
    return _evaluate(drop_at_eval, [eye] * drop_at_eval.n_ue, subcarriers)


def summarize(samples):
    """Mean, nearest-rank 10th percentile and empirical CDF of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("summarize needs at least one sample")
    p10 = float(x[max(math.ceil(0.1 * n), 1) - 1])
    cdf = list(zip(x.tolist(), (np.arange(1, n + 1) / n).tolist()))
    return {"mean": float(np.mean(x)), "p10": p10, "cdf": cdf}
