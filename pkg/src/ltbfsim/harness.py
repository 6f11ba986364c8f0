"""Monte Carlo sweeps over inversion method, precision and nulling.

A sweep draws ``n_drops`` channel realizations.  For each drop the long-term
covariances are estimated at the design instant, every beamformer variant of
the grid is built from them, the channel is aged by ``T_LT`` and all
variants are evaluated together with the exact-LTBF and full-MMSE baselines.
Drops are independent and seeded by ``(base_seed, drop)``, so results do
not depend on the number of workers.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flops
from .arith import AccumulatorPolicy, profile as parse_profile
from .channel import ScenarioConfig, evolve, generate_drop
from .inversion import InversionSpec, cg_inverse_history, finalize_inverse, \
    poly_inverse
from .linalg import hermitize, matmul, row_space_angle
from .ltbf import NullingConfig, estimate_covariances, nulled_user_covariance, \
    nulling_projector, prepare_design
from .metrics import evaluate_ltbf, evaluate_mmse_baseline, summarize

log = logging.getLogger(__name__)

FINITE_PRECISIONS = ("fp32", "q15.16", "q7.16")

COLUMNS = ["drop", "ue", "method", "order", "precision", "nulling", "q",
           "sinr_db", "capacity", "angle", "cond_Q", "cond_Rv", "flops",
           "status"]

SCHEMA = {
    "results.csv": {
        "drop": "Monte Carlo drop index",
        "ue": "user index within the drop",
        "method": "exact | cg | poly | mmse (full-dimension baseline)",
        "order": "CG iterations or polynomial degree (0 for baselines)",
        "precision": "arithmetic profile of the inversion",
        "nulling": "1 if interference nulling was applied",
        "q": "nulling rank (0 without nulling)",
        "sinr_db": "post-equalization SINR in dB, averaged over subcarriers"
                   " and streams",
        "capacity": "sum over streams of log2(1+SINR), averaged over"
                    " subcarriers [bits/s/Hz]",
        "angle": "largest principal angle [rad] between the projection's row"
                 " space and the exact projection with the same nulling",
        "cond_Q": "condition number of the aggregate covariance",
        "cond_Rv": "condition number of the interference-reduced covariance"
                   " (empty without nulling)",
        "flops": "complex multiply-adds of the inversion plus nulling"
                 " preprocessing",
        "status": "ok, or '+'-joined flags (stagnation, divergence,"
                  " overflow, floored, failed:<error>)",
    },
    "summary.csv": {
        "method/order/precision/nulling/q": "sweep coordinate",
        "n": "number of (drop, ue) samples",
        "mean_capacity": "mean of per-UE capacity",
        "p10_capacity": "nearest-rank 10th percentile of per-UE capacity",
        "mean_sinr_db": "mean of per-UE SINR in dB",
        "mean_flops": "mean flops per drop",
    },
    "cdf_<coordinate>.csv": {
        "sinr_db": "sorted per-UE SINR samples",
        "cdf": "empirical cumulative probability rank/n",
    },
    "flops.csv": {
        "method/order/precision/nulling/q": "sweep coordinate",
        "n_rx": "antenna count",
        "mean_flops": "mean complex multiply-adds per drop",
    },
}


@dataclass
class SweepSpec:
    """Grid of beamformer variants and Monte Carlo size.

    ``methods`` maps ``"cg"``/``"poly"`` to the list of orders to evaluate.
    ``nulling`` is ``"on"``, ``"off"`` or ``"both"``.  ``q_grid`` defaults
    to the interferer path count and ``r`` to the streams per UE.
    """
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    methods: dict = field(default_factory=lambda: {
        "cg": list(range(1, 11)), "poly": list(range(1, 11))})
    precisions: tuple = ("fp64", "fp32", "q15.16", "q7.16")
    nulling: str = "both"
    q_grid: tuple = ()
    r: int = 0
    n_drops: int = 50
    base_seed: int = 0
    scaling: str = "spectral"
    accumulator: str = "wide"
    eval_subcarriers: int = 16

    def __post_init__(self):
        if self.nulling not in ("on", "off", "both"):
            raise ValueError("nulling must be on, off or both")
        if self.n_drops < 1:
            raise ValueError("n_drops must be >= 1")
        if not self.precisions:
            raise ValueError("empty precision grid")
        if not any(self.methods.values()):
            raise ValueError("empty method grid")
        for m in self.methods:
            if m not in ("cg", "poly"):
                raise ValueError(f"unknown sweep method {m!r}")
        for p in self.precisions:
            parse_profile(p)

    @property
    def rank(self) -> int:
        return self.r or self.scenario.streams_per_ue

    @property
    def nulling_ranks(self) -> tuple:
        return tuple(self.q_grid) or (self.scenario.interferer_paths,)

    def nulling_configs(self):
        out = []
        if self.nulling in ("off", "both"):
            out.append(NullingConfig(False, 0))
        if self.nulling in ("on", "both") and \
                self.scenario.interferer_inr_db is not None:
            out.extend(NullingConfig(True, q) for q in self.nulling_ranks)
        return out


@dataclass
class ExperimentResult:
    records: list
    spec: SweepSpec | None = None

    def coordinates(self):
        seen = {}
        for r in self.records:
            seen.setdefault(coord_of(r), None)
        return list(seen)

    def select(self, method, order=0, precision="fp64", nulling=0, q=None):
        out = []
        for r in self.records:
            if (r["method"], r["order"], r["precision"], r["nulling"]) != \
                    (method, order, precision, int(nulling)):
                continue
            if q is not None and r["q"] != q:
                continue
            out.append(r)
        return out

    def capacity_matrix(self, method, order=0, precision="fp64", nulling=0,
                        q=None):
        """Capacities as an ``(n_drops, n_ue)`` array."""
        rows = self.select(method, order, precision, nulling, q)
        drops = sorted({r["drop"] for r in rows})
        ues = sorted({r["ue"] for r in rows})
        m = np.full((len(drops), len(ues)), np.nan)
        di = {d: i for i, d in enumerate(drops)}
        ui = {u: i for i, u in enumerate(ues)}
        for r in rows:
            m[di[r["drop"]], ui[r["ue"]]] = r["capacity"]
        return m

    def mean_capacity(self, *a, **kw):
        return float(np.nanmean(self.capacity_matrix(*a, **kw)))


def coord_of(rec):
    return (rec["method"], rec["order"], rec["precision"], rec["nulling"],
            rec["q"])


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def _records(drop_i, method, order, precision, null, design, metrics, angles,
             flop_count, status):
    out = []
    for u in range(metrics.capacity.size):
        sinr = metrics.sinr[u]
        out.append({
            "drop": drop_i, "ue": u, "method": method, "order": order,
            "precision": precision, "nulling": int(null.enabled),
            "q": design.q_used if null.enabled else 0,
            "sinr_db": float(np.mean(10 * np.log10(np.maximum(sinr,
                                                                 1e-30)))),
            "capacity": float(metrics.capacity[u]),
            "angle": float(angles[u]) if angles is not None else math.nan,
            "cond_Q": float(design.cond_Q) if design else math.nan,
            "cond_Rv": (float(design.cond_Rv)
                        if design and design.cond_Rv is not None else math.nan),
            "flops": int(flop_count), "status": status,
        })
    return out


def _failed(drop_i, n_ue, method, order, precision, null, q, err):
    return [{"drop": drop_i, "ue": u, "method": method, "order": order,
             "precision": precision, "nulling": int(null.enabled), "q": q,
             "sinr_db": math.nan, "capacity": math.nan, "angle": math.nan,
             "cond_Q": math.nan, "cond_Rv": math.nan, "flops": 0,
             "status": f"failed:{type(err).__name__}"} for u in range(n_ue)]


def eval_subcarrier_index(cfg: ScenarioConfig, count: int):
    count = min(max(count, 1), cfg.n_subcarriers)
    return np.linspace(0, cfg.n_subcarriers - 1, count).round().astype(int)


def run_drop(spec: SweepSpec, drop_i: int) -> list:
    """All records of one drop."""
    scenario = spec.scenario.replace(seed=spec.base_seed)
    drop = generate_drop(scenario, drop_i)
    covs = estimate_covariances(drop)
    aged = evolve(drop, scenario.T_LT_ms)
    sc = eval_subcarrier_index(scenario, spec.eval_subcarriers)
    r = spec.rank
    acc = AccumulatorPolicy(spec.accumulator)
    n_ue = drop.n_ue
    recs = []

    base = evaluate_mmse_baseline(aged, sc)
    recs += _records(drop_i, "mmse", 0, "fp64", NullingConfig(False, 0), None,
                     base, None, 0, "ok")

    for null in spec.nulling_configs():
        try:
            design = prepare_design(covs, null)
            g_exact = design.exact(r)
        except Exception as err:  # noqa: BLE001 - recorded as failed cell
            log.warning("drop %d design failed: %s", drop_i, err)
            recs += _failed(drop_i, n_ue, "exact", 0, "fp64", null, null.q,
                            err)
            continue
        status = "+".join(design.warnings) or "ok"
        m = evaluate_ltbf(aged, g_exact, sc)
        n = design.target.shape[0]
        recs += _records(drop_i, "exact", 0, "fp64", null, design, m,
                         [0.0] * n_ue, n ** 3 + design.flops, status)

        def variant(method, order, prec, a, st):
            a, st = finalize_inverse(a, st)
            st.flags.update(design.warnings)
            g = design.from_inverse(a, r)
            angles = [row_space_angle(x, y) for x, y in zip(g, g_exact)]
            return _records(drop_i, method, order, prec, null, design,
                            evaluate_ltbf(aged, g, sc), angles,
                            st.flops + design.flops, st.describe())

        for prec in spec.precisions:
            p = parse_profile(prec)
            orders = sorted(spec.methods.get("cg", []))
            if orders:
                try:
                    hist = cg_inverse_history(design.target, orders[-1], p,
                                              acc)
                    for k in orders:
                        recs += variant("cg", k, prec, *hist[k - 1])
                except Exception as err:  # noqa: BLE001
                    for k in orders:
                        recs += _failed(drop_i, n_ue, "cg", k, prec, null,
                                        design.q_used, err)
            for d in sorted(spec.methods.get("poly", [])):
                try:
                    a, st = poly_inverse(design.target, d, p, spec.scaling,
                                         acc)
                    recs += variant("poly", d, prec, a, st)
                except Exception as err:  # noqa: BLE001
                    recs += _failed(drop_i, n_ue, "poly", d, prec, null,
                                    design.q_used, err)
    return recs


def run_sweep(spec: SweepSpec, workers: int = 1) -> ExperimentResult:
    drops = range(spec.n_drops)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_drop, [spec] * spec.n_drops, drops))
    else:
        chunks = [run_drop(spec, d) for d in drops]
    return ExperimentResult([r for c in chunks for r in c], spec)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def coordinate_name(coord) -> str:
    method, order, prec, null, q = coord
    tag = method if method in ("exact", "mmse") else f"{method}-{order}"
    name = f"{tag}_{prec}_{'null' if null else 'nonull'}"
    if null:
        name += f"_q{q}"
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def summary_rows(result: ExperimentResult):
    groups = {}
    for r in result.records:
        groups.setdefault(coord_of(r), []).append(r)
    rows = []
    for coord, recs in groups.items():
        cap = [r["capacity"] for r in recs if not math.isnan(r["capacity"])]
        sinr = [r["sinr_db"] for r in recs if not math.isnan(r["sinr_db"])]
        per_drop = {}
        for r in recs:
            per_drop[r["drop"]] = r["flops"]
        if cap:
            s = summarize(cap)
            mean, p10 = s["mean"], s["p10"]
        else:
            mean = p10 = math.nan
        rows.append(list(coord) + [len(recs), mean, p10,
                                   float(np.mean(sinr)) if sinr else math.nan,
                                   float(np.mean(list(per_drop.values())))])
    return rows


def emit(result: ExperimentResult, out_dir) -> list:
    """Write results, summary, per-coordinate CDFs, flops and the schema."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "results.csv"
    _write(p, COLUMNS, ([r[c] for c in COLUMNS] for r in result.records))
    written.append(p)

    coord_cols = ["method", "order", "precision", "nulling", "q"]
    srows = summary_rows(result)
    p = out / "summary.csv"
    _write(p, coord_cols + ["n", "mean_capacity", "p10_capacity",
                            "mean_sinr_db", "mean_flops"], srows)
    written.append(p)

    n_rx = result.spec.scenario.n_rx if result.spec else ""
    p = out / "flops.csv"
    _write(p, coord_cols + ["n_rx", "mean_flops"],
           (row[:5] + [n_rx, row[-1]] for row in srows))
    written.append(p)

    for coord in result.coordinates():
        sinr = [r["sinr_db"] for r in result.records
                if coord_of(r) == coord and not math.isnan(r["sinr_db"])]
        p = out / f"cdf_{coordinate_name(coord)}.csv"
        rows = summarize(sinr)["cdf"] if sinr else []
        _write(p, ["sinr_db", "cdf"], rows)
        written.append(p)

    p = out / "schema.json"
    p.write_text(json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def read_results(path) -> ExperimentResult:
    ints = {"drop", "ue", "order", "nulling", "q", "flops"}
    recs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if k in ints:
                    rec[k] = int(v)
                elif k in ("method", "precision", "status"):
                    rec[k] = v
                else:
                    rec[k] = float(v) if v != "" else math.nan
            recs.append(rec)
    return ExperimentResult(recs)


# ---------------------------------------------------------------------------
# complexity accounting
# ---------------------------------------------------------------------------

def _random_spd(rng, n, rank=None):
    rank = rank or n
    h = (rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank)))
    return hermitize(np.eye(n) + h @ h.conj().T / n)


def _fit(measured, model):
    """Least-squares coefficient and worst relative deviation from it."""
    m = np.asarray(measured, dtype=float)
    x = np.asarray(model, dtype=float)
    c = float(m @ x / (x @ x))
    dev = float(np.max(np.abs(m - c * x) / (c * x)))
    return c, dev


# Labels of the products each complexity model accounts for.  Lower-order
# vector work (CG dots and updates, scalings, q x q products) is tallied
# under other labels and reported as the full-count deviation.
DOMINANT_LABELS = {
    "cg": ("cg_matvec",),
    "poly": ("poly_matmul",),
    "nulled_cov": ("nulled_cov",),
    "projection": ("matmul",),
}


def verify_complexity(n_values=(16, 32, 64), cg_orders=(2, 4),
                      poly_orders=(3, 5), q_values=(1, 2, 4), r=1, seed=0,
                      tolerance=0.15):
    """Measure kernel flop counts and fit them to the complexity models.

    Models: ``k N^3`` for the CG inverse, ``(d-1) N^3`` for the polynomial
    inverse, ``q N^2`` for the nulled user covariance and ``r N`` for applying
    a projection to one received vector.  Each model is fitted to the count
    of the operations it accounts for (``DOMINANT_LABELS``); the fit of the
    full count, lower-order terms included, is reported alongside.
    """
    rng = np.random.default_rng(seed)
    samples = {"cg": [], "poly": [], "nulled_cov": [], "projection": []}

    def record(name, n, param, tally, model):
        dom = sum(tally[lbl] for lbl in DOMINANT_LABELS[name])
        samples[name].append((n, param, dom, model, tally.total))

    for n in n_values:
        q_mat = _random_spd(rng, n, rank=max(2, n // 8))
        for k in cg_orders:
            with flops.counting() as t:
                cg_inverse_history(q_mat, k)
            record("cg", n, k, t, k * n ** 3)
        for d in poly_orders:
            with flops.counting() as t:
                poly_inverse(q_mat, d)
            record("poly", n, d, t, (d - 1) * n ** 3)
        qi = _random_spd(rng, n, rank=2)
        for q in q_values:
            hv = rng.standard_normal((n, q)) + 1j * rng.standard_normal((n, q))
            _, m, _ = nulling_projector(hv)
            with flops.counting() as t:
                nulled_user_covariance(qi, hv, m)
            record("nulled_cov", n, q, t, q * n ** 2)
        g = rng.standard_normal((r, n)) + 0j
        y = rng.standard_normal(n) + 0j
        with flops.counting() as t:
            matmul(g, y)
        record("projection", n, r, t, r * n)

    report = {"tolerance": tolerance, "models": {}, "ratios": {}}
    for name, rows in samples.items():
        model = [s[3] for s in rows]
        c, dev = _fit([s[2] for s in rows], model)
        c_full, dev_full = _fit([s[4] for s in rows], model)
        report["models"][name] = {
            "coefficient": c, "max_relative_deviation": dev,
            "pass": dev <= tolerance,
            "full_count_coefficient": c_full,
            "full_count_max_relative_deviation": dev_full,
            "samples": [{"n": s[0], "param": s[1], "measured": s[2],
                         "measured_full": s[4], "model": s[3]}
                        for s in rows]}

    def ratio(name, hi, lo):
        out = []
        for n in n_values:
            by = {s[1]: s[4] for s in samples[name] if s[0] == n}
            if hi in by and lo in by:
                out.append(by[hi] / by[lo])
        return out

    if {2, 4} <= set(cg_orders):
        report["ratios"]["cg_k4_over_k2"] = ratio("cg", 4, 2)
    if {3, 5} <= set(poly_orders):
        report["ratios"]["poly_d5_over_d3"] = ratio("poly", 5, 3)
    report["pass"] = all(m["pass"] for m in report["models"].values())
    return report


# ---------------------------------------------------------------------------
# trend checks
# ---------------------------------------------------------------------------

@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def first_order_reaching(result, precision, target, nulling, max_order,
                         method="cg"):
    for k in range(1, max_order + 1):
        if not result.select(method, k, precision, nulling):
            continue
        if result.mean_capacity(method, k, precision, nulling) >= target:
            return k
    return None


def bootstrap_tail_gap(result, precision="q7.16", k=3, n_boot=1000, seed=0):
    """Fraction of drop-bootstrap resamples where the relative p10 gain of
    nulling exceeds its relative mean gain."""
    on = result.capacity_matrix("cg", k, precision, 1)
    off = result.capacity_matrix("cg", k, precision, 0)
    rng = np.random.default_rng(seed)
    n = on.shape[0]
    wins = 0

    def rel(a, b):
        if b > 0:
            return (a - b) / b
        return math.inf if a > b else 0.0

    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        a, b = on[idx].ravel(), off[idx].ravel()
        sa, sb = summarize(a), summarize(b)
        if rel(sa["p10"], sb["p10"]) > rel(sa["mean"], sb["mean"]):
            wins += 1
    return wins / n_boot


def check_trends(result: ExperimentResult) -> list:
    """Iteration-savings and cell-edge trend checks on a CG sweep.

    Requires a sweep with CG orders up to 20, precisions fp32/q15.16/q7.16
    and nulling both.
    """
    out = []
    ref_on = result.mean_capacity("exact", 0, "fp64", 1)
    ref_off = result.mean_capacity("exact", 0, "fp64", 0)
    for prec, kmax in (("fp32", 4), ("q15.16", 6)):
        k = first_order_reaching(result, prec, 0.95 * ref_on, 1, 20)
        out.append(CheckOutcome(
            f"4a {prec} with nulling reaches 95% of exact LTBF by k<={kmax}",
            k is not None and k <= kmax,
            f"first k={k}, exact nulled mean={ref_on:.4f}"))
    c20 = result.mean_capacity("cg", 20, "q7.16", 0)
    out.append(CheckOutcome(
        "4b q7.16 without nulling floors below 90% at k=20",
        c20 <= 0.90 * ref_off,
        f"k=20 mean={c20:.4f}, exact non-nulled mean={ref_off:.4f}"))
    bad = []
    for prec in FINITE_PRECISIONS:
        for k in range(1, 7):
            on = result.mean_capacity("cg", k, prec, 1)
            off = result.mean_capacity("cg", k, prec, 0)
            if not on >= off:
                bad.append(f"{prec} k={k}: {on:.4f} < {off:.4f}")
    out.append(CheckOutcome("4c nulled >= non-nulled for k<=6", not bad,
                            "; ".join(bad) or "all cells ordered"))
    frac = bootstrap_tail_gap(result)
    out.append(CheckOutcome(
        "5 q7.16 k=3 relative p10 gain exceeds relative mean gain",
        frac >= 0.80, f"bootstrap fraction={frac:.3f}"))
    return out
