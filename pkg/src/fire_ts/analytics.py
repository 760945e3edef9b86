"""Concept-drift and basis-evolution diagnostics for single channels.

Drift uses ADWIN (adaptive windowing): the window is kept as an exponential
histogram of buckets, and every ``clock`` updates each bucket boundary is
tested as a split into an older part W0 and a newer part W1.  A split is a
change point when the sub-window means differ by at least

    eps_cut = sqrt(2 m var ln(2 ln n / delta)) + 2/3 m ln(2 ln n / delta),
    m = 1/(n0 - min_len + 1) + 1/(n1 - min_len + 1),

with ``var`` the window variance.  On a cut the oldest bucket is dropped
and the test repeats.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import patch
from .spectral import rfft_array

DEFAULTS = {
    "adwin_delta": 0.002,
    "eta": 1e-8,
    "eps": 0.5,
    "tau": 0.5,
    "patch_len": 16,
    "stride": 8,
}


def cut_threshold(n0: int, n1: int, variance: float, delta: float, min_len: int) -> float:
    n = n0 + n1
    dd = math.log(2.0 * math.log(n) / delta)
    m = 1.0 / (n0 - min_len + 1) + 1.0 / (n1 - min_len + 1)
    return math.sqrt(2.0 * m * variance * dd) + 2.0 / 3.0 * dd * m


class AdwinState:
    """Exponential-histogram window.  ``rows[i]`` holds buckets of ``2**i``
    values as ``[sum, variance]`` pairs, oldest first."""

    def __init__(self, delta: float = 0.002, max_buckets: int = 5, clock: int = 32,
                 min_window_length: int = 5):
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        self.delta = delta
        self.max_buckets = max_buckets
        self.clock = clock
        self.min_window_length = min_window_length
        self.rows: list[list[list[float]]] = [[]]
        self.width = 0
        self.total = 0.0
        self.variance = 0.0  # sum of squared deviations
        self.n_seen = 0
        self.n_detections = 0

    @property
    def mean(self) -> float:
        return self.total / self.width if self.width else 0.0

    def bucket_counts(self) -> list[int]:
        return [2**i for i, row in enumerate(self.rows) for _ in row]

    def update(self, value: float) -> bool:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("ADWIN input must be finite")
        self._insert(value)
        self._compress()
        self.n_seen += 1
        detected = False
        if self.n_seen % self.clock == 0 and self.width > self.min_window_length:
            detected = self._detect()
        if detected:
            self.n_detections += 1
        return detected

    def _insert(self, value: float) -> None:
        if self.width > 0:
            mu = self.total / self.width
            self.variance += self.width * (value - mu) ** 2 / (self.width + 1)
        self.width += 1
        self.total += value
        self.rows[0].append([value, 0.0])

    def _compress(self) -> None:
        i = 0
        while i < len(self.rows) and len(self.rows[i]) > self.max_buckets:
            size = 2**i
            (u1, v1), (u2, v2) = self.rows[i][0], self.rows[i][1]
            merged = [u1 + u2, v1 + v2 + size * size * (u1 / size - u2 / size) ** 2 / (2 * size)]
            del self.rows[i][:2]
            if i + 1 == len(self.rows):
                self.rows.append([])
            self.rows[i + 1].append(merged)
            i += 1

    def _drop_oldest(self) -> None:
        i = len(self.rows) - 1
        while i > 0 and not self.rows[i]:
            i -= 1
        u, v = self.rows[i].pop(0)
        n = 2**i
        self.width -= n
        self.total -= u
        if self.width > 0:
            mu_rest = self.total / self.width
            self.variance -= v + n * self.width * (u / n - mu_rest) ** 2 / (n + self.width)
            self.variance = max(self.variance, 0.0)
        else:
            self.variance = 0.0
        while len(self.rows) > 1 and not self.rows[-1]:
            self.rows.pop()

    def _detect(self) -> bool:
        change = False
        reduce = True
        while reduce:
            reduce = False
            n0, u0 = 0, 0.0
            n1, u1 = self.width, self.total
            var = self.variance / self.width
            min_len = self.min_window_length
            for i in range(len(self.rows) - 1, -1, -1):
                size = 2**i
                for u, _ in self.rows[i]:
                    n0 += size
                    n1 -= size
                    u0 += u
                    u1 -= u
                    if n1 <= min_len + 1:
                        break
                    if n0 <= min_len + 1:
                        continue
                    diff = abs(u0 / n0 - u1 / n1)
                    if diff >= cut_threshold(n0, n1, var, self.delta, min_len):
                        reduce = change = True
                        break
                if reduce or n1 <= min_len + 1:
                    break
            if reduce:
                self._drop_oldest()
                if self.width <= min_len:
                    reduce = False
        return change


def adwin_update(state: AdwinState, value: float) -> tuple[AdwinState, bool]:
    return state, state.update(value)


@dataclass
class DriftReport:
    n_change: int
    n_total: int
    degree: float
    change_indices: list[int] = field(default_factory=list)


def drift_degree(channel, delta: float = DEFAULTS["adwin_delta"], **adwin_kw) -> DriftReport:
    values = np.asarray(channel, dtype=np.float64).ravel()
    if values.size < 2:
        raise ValueError("drift_degree needs at least 2 values")
    state = AdwinState(delta=delta, **adwin_kw)
    hits = [i for i, v in enumerate(values) if state.update(v)]
    return DriftReport(len(hits), int(values.size), len(hits) / values.size, hits)


@dataclass
class EvolutionReport:
    per_patch_flags: list[bool]
    evolving_fraction_per_patch: list[float]
    degree: float
    params: dict


def basis_energy(channel, patch_len: int = DEFAULTS["patch_len"],
                 stride: int = DEFAULTS["stride"]) -> np.ndarray:
    """``[Q, patch_len // 2 + 1]`` squared moduli of each patch's one-sided DFT."""
    values = np.asarray(channel, dtype=np.float64).ravel()
    ps = patch(values, patch_len, stride)
    return np.abs(rfft_array(ps.patches)) ** 2


def evolution_degree(energies, eta: float = DEFAULTS["eta"], eps: float = DEFAULTS["eps"],
                     tau: float = DEFAULTS["tau"], **extra_params) -> EvolutionReport:
    """Fraction of patches whose share of bases with relative energy change
    above ``eps`` exceeds ``tau``.  The first patch has no predecessor and is
    never flagged; the degree is taken over the Q - 1 comparable patches."""
    E = np.asarray(energies, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 2:
        raise ValueError("evolution_degree needs at least 2 patches")
    if eta <= 0 or eps <= 0 or not 0 < tau <= 1:
        raise ValueError("need eta > 0, eps > 0 and 0 < tau <= 1")
    rel = np.abs(E[1:] - E[:-1]) / (E[:-1] + eta)
    frac = (rel > eps).mean(axis=1)
    flags = [False] + [bool(f > tau) for f in frac]
    params = {"eta": eta, "eps": eps, "tau": tau, **extra_params}
    return EvolutionReport(flags, [0.0] + frac.tolist(), float(np.sum(flags[1:]) / (len(flags) - 1)), params)


def analyze_channel(values, params: dict | None = None) -> dict:
    p = {**DEFAULTS, **(params or {})}
    drift = drift_degree(values, p["adwin_delta"])
    E = basis_energy(values, p["patch_len"], p["stride"])
    evo = evolution_degree(E, p["eta"], p["eps"], p["tau"],
                           patch_len=p["patch_len"], stride=p["stride"])
    return {
        "d_drift": drift.degree,
        "n_change": drift.n_change,
        "n_total": drift.n_total,
        "d_evolution": evo.degree,
        "n_evolving": int(sum(evo.per_patch_flags)),
        "n_patches": len(evo.per_patch_flags),
        "params": p,
    }


def _analyze_one(args):
    values, params = args
    return analyze_channel(values, params)


def analyze_series(values: np.ndarray, names, params: dict | None = None,
                   jobs: int = 1) -> dict:
    """Per-channel report for a ``[L, C]`` array."""
    cols = [np.ascontiguousarray(values[:, c]) for c in range(values.shape[1])]
    work = [(c, params) for c in cols]
    if jobs > 1 and len(cols) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_analyze_one, work))
    else:
        results = [_analyze_one(w) for w in work]
    return dict(zip(names, results))


def report_dict(report) -> dict:
    return asdict(report)
