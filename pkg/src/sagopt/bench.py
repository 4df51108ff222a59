"""Synthetic data, experiment drivers and deterministic CSV output.

Random numbers come from SplitMix64 with Gaussian variates drawn by the
Marsaglia polar method, so every stream is reproducible from a 64-bit seed
without depending on numpy's generator internals.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np

from . import core, ode, proximal, stability
from .exceptions import SagOptError

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


# --------------------------------------------------------------------------
# PRNG
# --------------------------------------------------------------------------

class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood constants)."""

    def __init__(self, seed):
        self.state = int(seed) & MASK64
        self._spare = None

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def split(self):
        """Independent child stream seeded from this one."""
        return SplitMix64(self.next_u64())

    def uniform(self):
        """Double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, bound):
        """Unbiased integer in [0, bound) by rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound

    def gauss(self):
        if self._spare is not None:
            g, self._spare = self._spare, None
            return g
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                m = math.sqrt(-2.0 * math.log(s) / s)
                self._spare = v * m
                return u * m

    def gauss_array(self, shape):
        n = int(np.prod(shape))
        return np.array([self.gauss() for _ in range(n)]).reshape(shape)


# --------------------------------------------------------------------------
# Synthetic matrix completion data
# --------------------------------------------------------------------------

def generate_low_rank(rows, cols, rank, seed):
    """``M = A B^T / sqrt(rank)`` with standard Gaussian factors.

    The scaling gives entries of unit variance.
    """
    if not 1 <= rank <= min(rows, cols):
        raise ValueError("rank must lie in [1, min(rows, cols)]")
    rng = SplitMix64(seed)
    A = rng.gauss_array((rows, rank))
    B = rng.gauss_array((cols, rank))
    return A @ B.T / math.sqrt(rank)


def sample_mask(rows, cols, fraction, seed):
    """Exactly ``floor(fraction * rows * cols)`` entries, uniformly chosen."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    total = rows * cols
    count = int(math.floor(fraction * total + 1e-9))
    mask = np.zeros(total, dtype=bool)
    if count == total:
        mask[:] = True
        return mask.reshape(rows, cols)
    rng = SplitMix64(seed)
    perm = np.arange(total)
    for i in range(count):  # partial Fisher-Yates
        j = i + rng.below(total - i)
        perm[i], perm[j] = perm[j], perm[i]
    mask[perm[:count]] = True
    return mask.reshape(rows, cols)


def make_problem(rows=200, cols=200, rank=4, fraction=0.3, lam=1.0, seed=0):
    """Completion problem; the mask stream is seeded with ``seed + 1``."""
    M = generate_low_rank(rows, cols, rank, seed)
    mask = sample_mask(rows, cols, fraction, (seed + 1) & MASK64)
    return proximal.CompletionProblem.from_matrix(M, mask, lam)


DESK = dict(rows=200, cols=200, rank=4, fraction=0.3, lam=1.0, seed=20200101)
FULL_SCALE = dict(DESK, rows=1000, cols=1000)


# --------------------------------------------------------------------------
# Scans
# --------------------------------------------------------------------------

_FIXED_RUNNERS = {
    "fista": proximal.fista_run,
    "apg": proximal.apg_run,
    "sfista": proximal.sfista_run,
}


def feasible_step_scan(method, p, s_grid, iters, details=False):
    """Largest grid step whose run, and every smaller one, stays feasible.

    The grid is walked upward and stops at the first divergent run, so a
    feasible point above a divergent one is never reported.  Returns 0.0 if
    the smallest step already diverges.
    """
    s_grid = [float(s) for s in s_grid]
    if any(b <= a for a, b in zip(s_grid, s_grid[1:])):
        raise ValueError("s_grid must be strictly ascending")
    run = _FIXED_RUNNERS[method]
    best = 0.0
    record = []
    for s in s_grid:
        traj = run(p, s, iters)
        ok = traj.reason != "diverged"
        record.append((s, "feasible" if ok else "diverged", traj.values[-1], len(traj.values) - 1))
        if not ok:
            break
        best = s
    return (best, record) if details else best


def step_grid(step, top):
    """``step, 2 step, ..., top`` without accumulated rounding."""
    n = int(math.floor(top / step + 1e-9))
    return [round(i * step, 12) for i in range(1, n + 1)]


# --------------------------------------------------------------------------
# Tables, configs, files
# --------------------------------------------------------------------------

def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK64
    return h


def parse_config(text):
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def canonical_config(params):
    return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(params.items()))


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    params: Dict[str, object] = field(default_factory=dict)
    output: Optional[str] = None

    def canonical(self):
        return canonical_config(dict(self.params, kind=self.kind, seed=self.seed))

    @property
    def config_hash(self):
        return f"{fnv1a64(self.canonical().encode()):016x}"

    def get(self, key, default=None):
        return self.params.get(key, default)


@dataclass
class ResultTable:
    columns: List[str]
    rows: List[tuple] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(self.columns)}")
        self.rows.append(tuple(row))

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def where(self, **conds):
        idx = {k: self.columns.index(k) for k in conds}
        return [r for r in self.rows if all(r[idx[k]] == v for k, v in conds.items())]

    @property
    def nonfinite(self):
        return any(isinstance(v, float) and not math.isfinite(v) for r in self.rows for v in r)

    def to_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write(self, path):
        """Atomically write ``path`` and a ``.meta.json`` sidecar.

        Wall time stays out of the files so equal configs give equal bytes.
        """
        _atomic_write(path, self.to_csv_text())
        meta = {k: v for k, v in self.metadata.items() if k != "wall_time"}
        _atomic_write(path + ".meta.json", json.dumps(meta, sort_keys=True, indent=1) + "\n")


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, Fraction):
        return str(v)
    if v is None:
        return ""
    return str(v)


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def workers():
    """Thread cap from ``SAG_OPTIM_THREADS`` (0 or unset means auto)."""
    raw = os.environ.get("SAG_OPTIM_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("SAG_OPTIM_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def pmap(fn, items):
    """Order-preserving map over a thread pool capped by :func:`workers`."""
    items = list(items)
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


def _table(cfg, columns, operation):
    return ResultTable(columns, metadata={
        "kind": cfg.kind, "seed": cfg.seed, "config_hash": cfg.config_hash,
        "operation": operation, "config": cfg.canonical(),
    })


def _finish(table, started):
    table.metadata["wall_time"] = time.perf_counter() - started
    log.info("%s: %d rows in %.2fs", table.metadata["kind"], len(table.rows),
             table.metadata["wall_time"])
    return table


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

def make_objective(name, seed=0):
    """Named test objective and its starting point."""
    if name == "quadratic":
        return core.quadratic(1.0), np.ones(1)
    if name == "logistic":
        rng = SplitMix64(seed)
        A = rng.gauss_array((40, 2))
        y = np.where(A @ np.array([1.0, -0.5]) + 0.3 * rng.gauss_array(40) > 0, 1.0, -1.0)
        return core.logistic(A, y, ridge=0.1), np.array([2.0, -1.0])
    raise ValueError(f"unknown objective {name!r}")


def _schemes(value):
    if value in (None, "both"):
        return ["nag", "sag"]
    return [value] if isinstance(value, str) else list(value)


def order_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Truncation ladders at fixed ``t``; one row per ``(scheme, h)``."""
    started = time.perf_counter()
    t = float(cfg.get("t", 2.0))
    h_max = float(cfg.get("h_max", 0.04))
    n = int(cfg.get("ladder_len", 6))
    h_list = [h_max / 2 ** j for j in range(n)]
    f, x0 = make_objective(cfg.get("objective", "quadratic"), cfg.seed)
    table = _table(cfg, ["scheme", "t", "h", "L", "slope", "r2", "status"], "estimate_order")
    sol = None
    try:
        h_ref = min(h_list[-1] / 20.0, 1e-3)
        sol = ode.solve_limit_ode(f, x0, t + h_max + 2 * h_ref, h_ref)
    except SagOptError as exc:
        for sc in _schemes(cfg.get("scheme")):
            table.add(sc, t, math.nan, math.nan, math.nan, math.nan, f"error: {exc}")
        return _finish(table, started)
    for sc in _schemes(cfg.get("scheme")):
        try:
            rep = ode.estimate_order(sc, f, t, h_list, sol=sol)
        except SagOptError as exc:
            table.add(sc, t, math.nan, math.nan, math.nan, math.nan, f"error: {exc}")
            continue
        for row in rep.rows():
            table.add(*row, rep.status)
    return _finish(table, started)


STABILITY_COLUMNS = ["record", "scheme", "z", "max_root_modulus", "stable_flag",
                     "z_lo", "z_hi", "analytic_lo", "analytic_hi"]


def parse_param_triples(text):
    """``"k,m1,m2;k,m1,m2"`` into Fraction triples."""
    out = []
    for chunk in str(text).split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [Fraction(p.strip()) for p in chunk.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected k,m1,m2 in {chunk!r}")
        out.append(tuple(parts))
    return out


DEFAULT_PARAMS = "1/2,0,3;0,0,0;1,2,-1;2,-1,5;-3,4,1/2"


def stability_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Scanned regions plus analytic endpoints; summary rows come last."""
    started = time.perf_counter()
    z_max = float(cfg.get("z_max", 6.0))
    grid = float(cfg.get("grid", 1e-3))
    table = _table(cfg, STABILITY_COLUMNS, "stable_region")
    summaries = []
    for sc in _schemes(cfg.get("scheme")):
        region = stability.stable_region(sc, z_max, grid)
        for _, z, rho, flag in region.rows:
            table.add("scan", sc, z, rho, flag, None, None, None, None)
        summaries.append(("summary", sc, None, None, int(region.matches(region.analytic)),
                          region.z_lo, region.z_hi,
                          float(region.analytic.z_lo), float(region.analytic.z_hi)))
    params = cfg.get("params", DEFAULT_PARAMS)
    triples = parse_param_triples(params) if params else []
    for k, m1, m2 in triples:
        ok = stability.region_invariance_check([(k, m1, m2)], z_max=z_max, grid=grid)
        table.add("invariance", f"{k},{m1},{m2}", None, None, int(ok), None, None, 0.0, 4.0)
    for row in summaries:
        table.add(*row)
    return _finish(table, started)


def probe_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Empirical boundedness against the analytic prediction per step."""
    started = time.perf_counter()
    mu = float(cfg.get("mu", 1.0))
    iters = int(cfg.get("iters", 10_000))
    burn_in = int(cfg.get("burn_in", 100))
    s_grid = _float_list(cfg.get("s_grid", "0.5,1.0,1.5,2.5,3.5,4.5"))
    table = _table(cfg, ["scheme", "mu", "s", "z", "outcome", "predicted", "agree"],
                   "empirical_probe")
    jobs = [(sc, s) for sc in _schemes(cfg.get("scheme")) for s in s_grid]

    def one(job):
        sc, s = job
        out = stability.empirical_probe(sc, mu, s, iters, burn_in)
        char = stability.nag_char if sc == "nag" else stability.sag_char
        pred = "bounded" if stability.is_absolutely_stable(char(mu * s)) else "diverged"
        return sc, mu, s, mu * s, out, pred, int(out == pred)

    for row in pmap(one, jobs):
        table.add(*row)
    table.metadata["all_diverged"] = all(r[4] == "diverged" for r in table.rows)
    return _finish(table, started)


def _float_list(v):
    if isinstance(v, str):
        return [float(x) for x in v.replace(";", ",").split(",") if x.strip()]
    return [float(x) for x in v]


def _methods(value):
    if value in (None, "all"):
        return ["fista", "apg", "sfista"]
    return [value] if isinstance(value, str) else list(value)


def _problem(cfg):
    return make_problem(int(cfg.get("rows", DESK["rows"])), int(cfg.get("cols", DESK["cols"])),
                        int(cfg.get("rank", DESK["rank"])), float(cfg.get("fraction", DESK["fraction"])),
                        float(cfg.get("lam", DESK["lam"])), cfg.seed)


def fixed_step_experiment(cfg: ExperimentConfig, p=None) -> ResultTable:
    """Objective curves at one fixed step per method."""
    started = time.perf_counter()
    p = _problem(cfg) if p is None else p
    iters = int(cfg.get("iters", 200))
    s = float(cfg.get("s", 1.0))
    table = _table(cfg, ["method", "s", "iteration", "objective", "reason"], "fixed_step")
    for m in _methods(cfg.get("method")):
        traj = _FIXED_RUNNERS[m](p, s, iters)
        for i, v in enumerate(traj.values):
            table.add(m, s, i, v, traj.reason)
    table.metadata["all_diverged"] = all(r[4] == "diverged" for r in table.rows)
    return _finish(table, started)


def feasible_experiment(cfg: ExperimentConfig, p=None) -> ResultTable:
    """Feasible-step scans; one ``max`` row per method after the scan rows."""
    started = time.perf_counter()
    p = _problem(cfg) if p is None else p
    iters = int(cfg.get("iters", 200))
    if cfg.get("s_grid") is not None:
        s_grid = _float_list(cfg.get("s_grid"))
    else:
        s_grid = step_grid(float(cfg.get("grid", 0.1)), float(cfg.get("s_top", 6.0)))
    table = _table(cfg, ["record", "method", "s", "status", "final_objective", "iterations"],
                   "feasible_step_scan")
    methods = _methods(cfg.get("method"))
    scans = pmap(lambda m: feasible_step_scan(m, p, s_grid, iters, details=True), methods)
    best = {}
    for m, (best[m], rec) in zip(methods, scans):
        for s, status, fv, n in rec:
            table.add("scan", m, s, status, fv, n)
    for m, b in best.items():
        table.add("max", m, b, "feasible" if b > 0 else "none", None, None)
    table.metadata["all_diverged"] = all(b == 0 for b in best.values())
    return _finish(table, started)


def backtrack_experiment(cfg: ExperimentConfig, p=None) -> ResultTable:
    """Backtracking runs; trace rows then one reduction-count row per method."""
    started = time.perf_counter()
    p = _problem(cfg) if p is None else p
    iters = int(cfg.get("iters", 200))
    bt = proximal.BacktrackConfig(float(cfg.get("beta", 0.8)), float(cfg.get("s_init", 8.0)),
                                  int(cfg.get("max_halvings", 60)))
    table = _table(cfg, ["record", "method", "iteration", "step", "objective", "reductions"],
                   "backtracking_run")
    counts = {}
    for m in _methods(cfg.get("method")):
        traj, counts[m] = proximal.backtracking_run(m, p, bt, iters)
        for i, v in enumerate(traj.values):
            step = traj.steps[i - 1] if i else bt.s_init
            table.add("trace", m, i, step, v, None)
    for m, c in counts.items():
        table.add("reductions", m, None, None, None, c)
    table.metadata["all_diverged"] = False
    return _finish(table, started)


def verify_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Lemma matrices, Gronwall fuzz and coefficient identities."""
    started = time.perf_counter()
    n_max = int(cfg.get("n_max", 50))
    table = _table(cfg, ["check", "n", "value", "ok"], "verify")
    rep = ode.verify_lemma_bounds(n_max)
    for n in range(2, n_max + 1):
        lm = ode.lemma_matrices(n)
        d = lm.D_of_l[n + 1]
        closed = [[Fraction(v) for v in row] for row in d] == [[0, 1], [0, 1]]
        table.add("D_n_n+1", n, "[[{},{}],[{},{}]]".format(*[str(v) for row in d for v in row]),
                  int(closed))
        table.add("sup_norm_over_n", n, rep.sup_ratio[n], int(math.isfinite(rep.sup_ratio[n])))
    table.add("M", n_max, rep.M, int(math.isfinite(rep.M)))
    table.add("M3", n_max, rep.M3, int(rep.M3 == math.sqrt(2)))
    table.add("closed_forms", n_max, None, int(rep.closed_forms_ok))
    table.add("triangular_bound", n_max, None, int(rep.triangular_bound_ok))

    coeffs = core.scheme_coefficients(*core.SAG_PARAMS)
    bad = [n for n in range(2, 101) if core.normalized_recurrence(coeffs, n) != _published(n)]
    table.add("sag_coefficient_identity", 100, len(bad), int(not bad))

    rng = SplitMix64(cfg.seed)
    gron_ok = True
    for _ in range(100):
        alpha, beta = 0.01 + rng.uniform(), 0.01 + rng.uniform()
        eta = [beta * (0.1 + 0.9 * rng.uniform())]
        acc = eta[0]
        for _ in range(1, 60):
            eta.append((beta + alpha * acc) * (0.1 + 0.9 * rng.uniform()))
            acc += eta[-1]
        gron_ok &= ode.check_discrete_gronwall(eta, alpha, beta)
    table.add("gronwall_fuzz", 100, None, int(gron_ok))
    table.metadata["all_ok"] = all(r[3] for r in table.rows)
    return _finish(table, started)


def _published(n):
    n = Fraction(n)
    return ((10 * n * n + 9 * n + 6) / (4 * n * n + 8 * n),
            -(4 * n * n + 3) / (2 * n * n + 4 * n),
            (2 * n - 1) / (4 * n + 8),
            -n / (2 * n + 4))
