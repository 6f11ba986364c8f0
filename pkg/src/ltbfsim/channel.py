"""Synthetic clustered-multipath OFDM channels on a uniform planar array.

Every source (user or interferer) is a cluster of ``L`` specular paths
around a random centre direction.  A path carries a complex gain per
stream, azimuth/elevation, delay, Doppler shift and a slow angular drift.
Channels are rebuilt from these parameters at any instant, so evolving a
drop over the long-term window only changes path phases and angles.

Power normalization: each stream's path gains satisfy ``sum |g_l|^2 = 1``,
so the per-antenna channel power is one on average.  User strength enters
through ``alpha`` and interferer strength through ``alpha_v``.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import dumps_matrix, hermitize, loads_matrix

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    nx: int = 8
    ny: int = 8
    spacing: float = 0.5  # wavelengths

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("array needs at least one element per axis")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def n_rx(self) -> int:
        return self.nx * self.ny


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario parameters for drop generation.

    ``ue_snr_range_db`` and ``interferer_inr_db`` are effective values that
    include the array gain: a source with per-antenna power ``alpha`` has
    effective SNR ``alpha * n_rx`` relative to the unit noise floor.
    """
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    carrier_hz: float = 3.5e9
    n_ue: int = 4
    streams_per_ue: int = 1
    n_subcarriers: int = 64
    subcarrier_spacing_hz: float = 240e3
    ue_snr_range_db: tuple = (-6.0, 14.0)
    interferer_inr_db: float | None = 30.0
    paths_per_source: int = 4
    interferer_paths: int = 3
    angle_spread_deg: float = 5.0
    sector_deg: float = 120.0
    elevation_range_deg: float = 20.0
    delay_spread_s: float = 300e-9
    T_LT_ms: float = 10.0
    ue_speed_mps: float = 3.0
    angle_drift_deg_per_s: float = 0.1
    N_srs: int = 16
    n_null_frames: int = 20
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.ue_snr_range_db
        if self.n_ue < 1 and self.interferer_inr_db is None:
            raise ValueError("scenario has no sources")
        if self.n_ue < 0 or self.streams_per_ue < 1:
            raise ValueError("n_ue must be >= 0 and streams_per_ue >= 1")
        if lo > hi:
            raise ValueError("ue_snr_range_db must be ordered")
        if self.paths_per_source < 1 or self.interferer_paths < 1:
            raise ValueError("each source needs at least one path")
        if not 1 <= self.N_srs <= self.n_subcarriers:
            raise ValueError("N_srs must lie in [1, n_subcarriers]")
        if self.n_null_frames < 1:
            raise ValueError("n_null_frames must be >= 1")

    @property
    def n_rx(self) -> int:
        return self.geometry.n_rx

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class PathSet:
    """Multipath parameters of one source.

    ``gains`` has shape ``(L, n_streams)``; the other arrays have shape
    ``(L,)``.  Angles are radians, delays seconds, Doppler hertz.
    """
    gains: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    doppler: np.ndarray
    drift: np.ndarray  # rad/s, signed

    @property
    def n_paths(self) -> int:
        return self.theta.size

    def at(self, dt_s: float) -> "PathSet":
        if dt_s == 0.0:
            return self
        rot = np.exp(2j * np.pi * self.doppler * dt_s)
        lim = np.pi / 2
        return PathSet(
            gains=self.gains * rot[:, None],
            theta=np.clip(self.theta + self.drift * dt_s, -lim, lim),
            phi=self.phi.copy(), tau=self.tau.copy(),
            doppler=self.doppler.copy(), drift=self.drift.copy())


@dataclass
class ChannelDrop:
    """One Monte Carlo channel realization at instant ``time_s``."""
    config: ScenarioConfig
    index: int
    users: list
    interferer: PathSet | None
    alpha: np.ndarray           # per-antenna linear SNR of each UE
    alpha_v: float              # per-antenna linear INR, 0 if absent
    time_s: float = 0.0
    noise_var: float = 1.0

    @property
    def n_ue(self) -> int:
        return len(self.users)

    def user_channels(self, subcarriers=None):
        """Array of shape ``(n_ue, n_sc, n_rx, n_streams)``."""
        sc = _subcarrier_index(self.config, subcarriers)
        if not self.users:
            return np.zeros((0, sc.size, self.config.n_rx,
                             self.config.streams_per_ue), dtype=np.complex128)
        return np.stack([frequency_response(self.config, ps, sc)
                         for ps in self.users])

    def interferer_channel(self, subcarriers=None):
        """Array of shape ``(n_sc, n_rx)``, zeros if no interferer."""
        sc = _subcarrier_index(self.config, subcarriers)
        if self.interferer is None:
            return np.zeros((sc.size, self.config.n_rx), dtype=np.complex128)
        return frequency_response(self.config, self.interferer, sc)[..., 0]


def _subcarrier_index(cfg, subcarriers):
    if subcarriers is None:
        return np.arange(cfg.n_subcarriers)
    return np.asarray(subcarriers, dtype=int)


def srs_subcarriers(cfg: ScenarioConfig) -> np.ndarray:
    """Indices of ``N_srs`` reference tones spread evenly across the band."""
    return np.linspace(0, cfg.n_subcarriers - 1, cfg.N_srs).round().astype(int)


def steering_vector(geometry: ArrayGeometry, theta: float, phi: float):
    """Planar-array response; element ``(p, q)`` sits at index ``p * ny + q``."""
    u = np.sin(theta) * np.cos(phi)
    v = np.sin(phi)
    p = np.arange(geometry.nx)[:, None]
    q = np.arange(geometry.ny)[None, :]
    phase = 2 * np.pi * geometry.spacing * (p * u + q * v)
    return np.exp(1j * phase).ravel()


def _steering_matrix(geometry, theta, phi):
    return np.stack([steering_vector(geometry, t, f)
                     for t, f in zip(theta, phi)], axis=1)


def frequency_response(cfg: ScenarioConfig, paths: PathSet, subcarriers):
    """``H[n] = sum_l g_l a(theta_l, phi_l) exp(-j 2 pi n df tau_l)``.

    Returns shape ``(n_sc, n_rx, n_streams)``.
    """
    a = _steering_matrix(cfg.geometry, paths.theta, paths.phi)   # (N, L)
    f = np.asarray(subcarriers)[:, None] * cfg.subcarrier_spacing_hz
    delay = np.exp(-2j * np.pi * f * paths.tau[None, :])         # (n, L)
    weighted = delay[:, :, None] * paths.gains[None, :, :]        # (n, L, S)
    return np.einsum("ml,nls->nms", a, weighted)


def _draw_paths(rng, cfg: ScenarioConfig, n_paths, n_streams, moving=True):
    half_sector = np.deg2rad(cfg.sector_deg) / 2
    half_el = np.deg2rad(cfg.elevation_range_deg) / 2
    spread = np.deg2rad(cfg.angle_spread_deg)
    theta_c = rng.uniform(-half_sector, half_sector)
    phi_c = rng.uniform(-half_el, half_el)
    # Laplacian with the configured rms spread
    theta = theta_c + rng.laplace(0.0, spread / np.sqrt(2), n_paths)
    phi = phi_c + rng.laplace(0.0, spread / (2 * np.sqrt(2)), n_paths)
    lim = np.pi / 2
    theta = np.clip(theta, -lim, lim)
    phi = np.clip(phi, -lim, lim)

    if cfg.delay_spread_s > 0:
        tau = np.sort(rng.exponential(cfg.delay_spread_s, n_paths))
        tau -= tau[0]
        power = np.exp(-tau / cfg.delay_spread_s)
    else:
        tau = np.zeros(n_paths)
        power = np.ones(n_paths)
    power /= power.sum()
    g = (rng.standard_normal((n_paths, n_streams))
         + 1j * rng.standard_normal((n_paths, n_streams))) / np.sqrt(2)
    g *= np.sqrt(power)[:, None]
    g /= np.linalg.norm(g, axis=0, keepdims=True)

    heading = rng.uniform(0, 2 * np.pi)
    f_max = cfg.ue_speed_mps / cfg.wavelength if moving else 0.0
    doppler = f_max * np.cos(theta - heading) * np.cos(phi)
    drift_rate = np.deg2rad(cfg.angle_drift_deg_per_s) if f_max > 0 else 0.0
    drift = drift_rate * rng.choice([-1.0, 1.0], n_paths)
    return PathSet(gains=g, theta=theta, phi=phi, tau=tau, doppler=doppler,
                   drift=drift)


def drop_rng(cfg: ScenarioConfig, drop_index: int, stream: int = 0):
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, drop_index, stream]))


def generate_drop(cfg: ScenarioConfig, drop_index: int) -> ChannelDrop:
    """Draw one channel realization, deterministic in ``(cfg.seed, drop_index)``."""
    rng = drop_rng(cfg, drop_index)
    users = [_draw_paths(rng, cfg, cfg.paths_per_source, cfg.streams_per_ue)
             for _ in range(cfg.n_ue)]
    lo, hi = cfg.ue_snr_range_db
    snr_db = rng.uniform(lo, hi, cfg.n_ue)
    alpha = 10.0 ** (snr_db / 10.0) / cfg.n_rx
    interferer, alpha_v = None, 0.0
    if cfg.interferer_inr_db is not None:
        interferer = _draw_paths(rng, cfg, cfg.interferer_paths, 1)
        alpha_v = 10.0 ** (cfg.interferer_inr_db / 10.0) / cfg.n_rx
    return ChannelDrop(config=cfg, index=drop_index, users=users,
                       interferer=interferer, alpha=alpha, alpha_v=alpha_v)


def evolve(drop: ChannelDrop, dt_ms: float) -> ChannelDrop:
    """Advance the drop by ``dt_ms`` milliseconds of mobility."""
    if dt_ms < 0:
        raise ValueError("dt_ms must be non-negative")
    dt = dt_ms * 1e-3
    return dataclasses.replace(
        drop,
        users=[ps.at(dt) for ps in drop.users],
        interferer=None if drop.interferer is None else drop.interferer.at(dt),
        time_s=drop.time_s + dt)


def srs_covariance(h):
    """``(1/N_srs) sum_n H[n] H[n]^H`` over the leading axis of ``h``.

    ``h`` has shape ``(N_srs, n_rx)`` or ``(N_srs, n_rx, n_streams)``.
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.shape[0] == 0:
        raise ValueError("srs_covariance needs at least one subcarrier")
    if h.ndim == 2:
        h = h[:, :, None]
    return hermitize(np.einsum("nis,njs->ij", h, h.conj()) / h.shape[0])


def noncoherent_interference_covariance(drop: ChannelDrop, n_frames=None):
    """Sample covariance of null-frame observations ``sqrt(alpha_v) h_v x + w``.

    ``n_frames=None`` returns the expectation ``alpha_v * mean(h h^H) + I``.
    Every subcarrier of a frame contributes one observation.
    """
    cfg = drop.config
    h = drop.interferer_channel()
    n_sc, n = h.shape
    expected = drop.alpha_v * srs_covariance(h) + drop.noise_var * np.eye(n)
    if n_frames is None:
        return hermitize(expected)
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = drop_rng(cfg, drop.index, stream=1)
    acc = np.zeros((n, n), dtype=np.complex128)
    amp = np.sqrt(drop.alpha_v)
    nstd = np.sqrt(drop.noise_var / 2)
    for _ in range(n_frames):
        x = (rng.standard_normal(n_sc) + 1j * rng.standard_normal(n_sc)) \
            / np.sqrt(2)
        w = nstd * (rng.standard_normal((n_sc, n))
                    + 1j * rng.standard_normal((n_sc, n)))
        v = amp * h * x[:, None] + w
        acc += v.T @ v.conj()
    return hermitize(acc / (n_frames * n_sc))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------
#
# File layout: b"LTBFDROP", uint64 header length, UTF-8 JSON header, then one
# CMAT blob per source.  Blob columns: theta, phi, tau, doppler, drift,
# followed by one gain column per stream.

_DROP_MAGIC = b"LTBFDROP"


def _paths_to_matrix(ps: PathSet):
    cols = [ps.theta, ps.phi, ps.tau, ps.doppler, ps.drift]
    return np.column_stack([np.asarray(c, dtype=np.complex128) for c in cols]
                           + [ps.gains])


def _matrix_to_paths(m):
    re = m[:, :5].real
    return PathSet(gains=m[:, 5:].copy(), theta=re[:, 0].copy(),
                   phi=re[:, 1].copy(), tau=re[:, 2].copy(),
                   doppler=re[:, 3].copy(), drift=re[:, 4].copy())


def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["ue_snr_range_db"] = list(cfg.ue_snr_range_db)
    return d


def config_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    d["geometry"] = ArrayGeometry(**d["geometry"])
    d["ue_snr_range_db"] = tuple(d["ue_snr_range_db"])
    return ScenarioConfig(**d)


def save_drop(drop: ChannelDrop, path):
    header = {
        "config": config_to_dict(drop.config),
        "index": drop.index,
        "alpha": [float(a) for a in drop.alpha],
        "alpha_v": float(drop.alpha_v),
        "time_s": float(drop.time_s),
        "noise_var": float(drop.noise_var),
        "n_users": drop.n_ue,
        "has_interferer": drop.interferer is not None,
    }
    js = json.dumps(header, sort_keys=True).encode()
    parts = [_DROP_MAGIC, struct.pack("<Q", len(js)), js]
    for ps in drop.users + ([drop.interferer] if drop.interferer else []):
        parts.append(dumps_matrix(_paths_to_matrix(ps)))
    Path(path).write_bytes(b"".join(parts))


def load_drop(path) -> ChannelDrop:
    blob = Path(path).read_bytes()
    if not blob.startswith(_DROP_MAGIC):
        raise ValueError("not a drop file")
    (n,) = struct.unpack_from("<Q", blob, len(_DROP_MAGIC))
    start = len(_DROP_MAGIC) + 8
    header = json.loads(blob[start:start + n])
    off = start + n
    sources = []
    for _ in range(header["n_users"] + int(header["has_interferer"])):
        m, off = loads_matrix(blob, off)
        sources.append(_matrix_to_paths(m))
    users = sources[:header["n_users"]]
    interferer = sources[-1] if header["has_interferer"] else None
    return ChannelDrop(config=config_from_dict(header["config"]),
                       index=header["index"], users=users,
                       interferer=interferer,
                       alpha=np.array(header["alpha"]),
                       alpha_v=header["alpha_v"], time_s=header["time_s"],
                       noise_var=header["noise_var"])
