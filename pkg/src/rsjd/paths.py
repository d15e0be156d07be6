"""Sample paths under the auxiliary measure, the target measure, and killing.

``simulate_pieced`` alternates auxiliary-chain switch epochs with
single-regime segments; its law is the auxiliary measure and paths carry the
data needed for the likelihood ratio.  ``simulate_direct`` thins a rate
``qbar`` clock and is an independent construction of the target law.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .engine import BlockSimulator, Observer, SimulationError, grid_times, run_ensemble
from .model import ModelError, ModelSpec
from .rng import BLOCK_SIZE, as_streams, block_ranges, block_streams

SWITCH = "SWITCH"
JUMP = "JUMP"
KILL = "KILL"


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    state: tuple  # state at the event time (post-event for jumps)
    k_from: int = -1
    k_to: int = -1
    size: tuple | None = None
    large: bool = False

    def payload(self) -> str:
        if self.kind == SWITCH:
            return f"{self.k_from}->{self.k_to}"
        if self.kind == JUMP:
            return ";".join(repr(float(v)) for v in self.size) + (";large" if self.large else ";small")
        return ""


@dataclass(frozen=True)
class RegimePath:
    """An event-logged trajectory on a fixed grid.

    ``q_cum[i]`` is the trapezoidal integral of ``q_{Lambda}(X)`` up to
    ``times[i]`` along the event-refined grid.
    """

    times: np.ndarray
    states: np.ndarray
    regimes: np.ndarray
    events: tuple[Event, ...]
    q_cum: np.ndarray
    log_switch: float = 0.0
    alive: bool = True
    kill_time: float = math.inf

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def switch_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events if e.kind == SWITCH])

    @property
    def jump_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events if e.kind == JUMP])

    def jump_count(self, t: float, gamma=None) -> int:
        """``eta(t, Gamma)``: jumps up to time ``t`` with size in ``Gamma``."""
        n = 0
        for e in self.events:
            if e.kind == JUMP and e.time <= t and (gamma is None or gamma(np.asarray(e.size))):
                n += 1
        return n

    def to_rows(self, path_id: int | None = None) -> list[list]:
        rows = []
        ev = sorted(self.events, key=lambda e: e.time)
        merged = [(t, "GRID", tuple(x), int(k), "") for t, x, k in zip(self.times, self.states, self.regimes)]
        merged += [(e.time, e.kind, e.state, e.k_to if e.kind == SWITCH else -1, e.payload()) for e in ev]
        merged.sort(key=lambda r: (r[0], r[1] != "GRID"))
        cur = int(self.regimes[0])
        for t, kind, x, kk, payload in merged:
            if kind == "GRID":
                cur = kk
                row = [repr(float(t)), *[repr(float(v)) for v in x], cur, "", ""]
            else:
                reg = kk if kind == SWITCH else cur
                row = [repr(float(t)), *[repr(float(v)) for v in x], reg, kind, payload]
            if path_id is not None:
                row.append(path_id)
            rows.append(row)
        return rows


@dataclass(frozen=True)
class WeightedPath:
    path: RegimePath
    weight: float


@dataclass(frozen=True)
class HatSkeleton:
    times: np.ndarray  # switch times
    regimes: np.ndarray  # regime after each switch; regimes[0] is the start


class Recorder(Observer):
    """Keeps grid states and the event log of every lane."""

    def __init__(self, eps0: float):
        self.eps0 = eps0

    def start(self, st):
        n = st.n
        self.events = [[] for _ in range(n)]
        self.xs, self.ks, self.qs = [], [], []

    def grid(self, st, i, t):
        self.xs.append(st.x.copy())
        self.ks.append(st.k.copy())
        self.qs.append(st.q_cum.copy())

    def jump(self, st, idx, t, u, accepted, x_pre):
        for j in np.nonzero(accepted)[0]:
            lane = int(idx[j])
            uj = u[j]
            self.events[lane].append(
                Event(float(t[j]), JUMP, tuple(st.x[lane]), size=tuple(uj), large=bool(np.linalg.norm(uj) >= self.eps0))
            )

    def switch(self, st, idx, t, k_from, k_to):
        for j in np.nonzero(k_from != k_to)[0]:
            lane = int(idx[j])
            self.events[lane].append(Event(float(t[j]), SWITCH, tuple(st.x[lane]), int(k_from[j]), int(k_to[j])))

    def killed(self, st, idx, t):
        for j, lane in enumerate(idx):
            self.events[int(lane)].append(Event(float(t[j]), KILL, tuple(st.x[lane])))

    def paths(self, st, times) -> list[RegimePath]:
        X = np.stack(self.xs, axis=1)
        K = np.stack(self.ks, axis=1)
        Qc = np.stack(self.qs, axis=1)
        return [
            RegimePath(
                times.copy(),
                X[i],
                K[i],
                tuple(self.events[i]),
                Qc[i],
                float(st.log_switch[i]),
                bool(st.alive[i]),
                float(st.kill_time[i]),
            )
            for i in range(st.n)
        ]


def _x0(spec, x0):
    return np.asarray(x0, dtype=float).reshape(1, spec.d)


def _record(spec, x0, k0, t0, t1, h, rng_stream, switching, killing=None) -> RegimePath:
    if not 0 <= int(k0) < spec.n0:
        raise ModelError(f"regime {k0} out of range 0..{spec.n0 - 1}")
    times = grid_times(t0, t1, h)
    rec = Recorder(spec.eps0)
    sim = BlockSimulator(spec, as_streams(rng_stream), switching, killing, [rec], track_q=True)
    st = sim.run(_x0(spec, x0), np.array([int(k0)]), times)
    return rec.paths(st, times)[0]


def simulate_segment(spec: ModelSpec, k: int, x0, t0: float, t1: float, h: float, rng_stream) -> RegimePath:
    """Euler path of the single-regime operator ``L_k`` on ``[t0, t1]``."""
    return _record(spec, x0, k, t0, t1, h, rng_stream, "none")


def simulate_hat_chain(n0: int, k0: int, horizon: float, rng_stream) -> HatSkeleton:
    """Auxiliary chain: Exp(n0 - 1) holding times, uniform moves."""
    n0, k0 = int(n0), int(k0)
    if n0 < 1:
        raise ModelError("n0 must be >= 1")
    if not 0 <= k0 < n0:
        raise ModelError(f"regime {k0} out of range 0..{n0 - 1}")
    rng = as_streams(rng_stream).switching
    times, regs = [], [k0]
    if n0 > 1:
        t = rng.standard_exponential() / (n0 - 1)
        while t <= horizon:
            times.append(t)
            regs.append((regs[-1] + 1 + int(rng.integers(0, n0 - 1))) % n0)
            t += rng.standard_exponential() / (n0 - 1)
    return HatSkeleton(np.array(times), np.array(regs, dtype=np.int64))


def hat_first_switch(n0: int, k0: int, n_draws: int, rng_stream) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized first switch time and target of the auxiliary chain."""
    if n0 < 2:
        raise ModelError("the first switch needs n0 >= 2")
    rng = as_streams(rng_stream).switching
    tau = rng.standard_exponential(n_draws) / (n0 - 1)
    target = (k0 + 1 + rng.integers(0, n0 - 1, n_draws)) % n0
    return tau, target


def simulate_pieced(spec: ModelSpec, x0, k0: int, T: float, h: float, rng_stream) -> RegimePath:
    """One path under the auxiliary measure."""
    return _record(spec, x0, k0, 0.0, T, h, rng_stream, "hat")


def simulate_direct(spec: ModelSpec, x0, k0: int, T: float, h: float, rng_stream) -> RegimePath:
    """One path under the target measure by thinning at rate ``qbar``."""
    return _record(spec, x0, k0, 0.0, T, h, rng_stream, "thinned")


def simulate_killed(spec: ModelSpec, k: int, x0, T: float, h: float, mode: str, rng_stream):
    """Single-regime path killed at rate ``-q_kk``.

    Returns ``(path, survival)``; survival is 0/1 in CLOCK mode and
    ``exp(int q_kk)`` in WEIGHT mode.
    """
    mode = mode.lower()
    if mode not in ("clock", "weight"):
        raise ValueError("mode must be CLOCK or WEIGHT")
    path = _record(spec, x0, k, 0.0, T, h, rng_stream, "none", mode)
    if mode == "clock":
        return path, float(path.alive)
    return path, float(math.exp(-path.q_cum[-1]))


def likelihood_ratio(spec: ModelSpec, path: RegimePath, T: float | None = None) -> float:
    """``M_T`` of a path simulated under the auxiliary measure."""
    T = path.T if T is None else float(T)
    log_prod = 0.0
    for e in path.events:
        if e.kind == SWITCH and e.time <= T:
            q = spec.Q(np.asarray(e.state, dtype=float).reshape(1, spec.d))[0, e.k_from, e.k_to]
            if q <= 0:
                return 0.0
            log_prod += math.log(q)
    qT = float(np.interp(T, path.times, path.q_cum))
    return float(math.exp(log_prod - qT + (spec.n0 - 1) * T))


def weighted(spec: ModelSpec, path: RegimePath) -> WeightedPath:
    return WeightedPath(path, likelihood_ratio(spec, path))


# ----------------------------------------------------------------------------
# ensembles of recorded paths


def simulate_paths(
    spec: ModelSpec, x0, k0, T, h, n_paths, seed, switching="hat", killing=None, block_size=None
) -> list[RegimePath]:
    """Recorded paths of an ensemble; memory grows with ``n_paths * T / h``."""
    times = grid_times(0.0, T, h)
    X0 = np.asarray(x0, dtype=float)
    X0 = X0 if X0.ndim > 1 else np.broadcast_to(X0.reshape(spec.d), (n_paths, spec.d))
    K0 = np.broadcast_to(np.asarray(k0, dtype=np.int64), (n_paths,))
    out: list[RegimePath] = []
    for b, (start, stop) in enumerate(block_ranges(n_paths, block_size or BLOCK_SIZE)):
        rec = Recorder(spec.eps0)
        sim = BlockSimulator(spec, block_streams(seed, b), switching, killing, [rec], track_q=True)
        st = sim.run(X0[start:stop], K0[start:stop], times)
        out.extend(rec.paths(st, times))
    return out


def dump_paths_csv(paths: list[RegimePath], d: int, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *[f"x_{i + 1}" for i in range(d)], "regime", "event_kind", "event_payload", "path_id"])
    for pid, p in enumerate(paths):
        for row in p.to_rows(pid):
            w.writerow(row)
    return buf.getvalue()


class EventLog(Observer):
    """Flat arrays of accepted jump and realized switch times, for large ensembles."""

    def __init__(self, offset: int = 0):
        self.offset = offset
        self.jl, self.jt, self.sl, self.st_ = [], [], [], []

    def jump(self, st, idx, t, u, accepted, x_pre):
        if np.any(accepted):
            self.jl.append(idx[accepted] + self.offset)
            self.jt.append(t[accepted])

    def switch(self, st, idx, t, k_from, k_to):
        ch = k_from != k_to
        if np.any(ch):
            self.sl.append(idx[ch] + self.offset)
            self.st_.append(t[ch])

    def result(self):
        cat = lambda a, dt: np.concatenate(a) if a else np.zeros(0, dtype=dt)
        return {
            "jump_lane": cat(self.jl, np.int64),
            "jump_time": cat(self.jt, float),
            "switch_lane": cat(self.sl, np.int64),
            "switch_time": cat(self.st_, float),
        }


def count_coincidences(jump_lane, jump_time, switch_lane, switch_time) -> int:
    """Exact matches of ``(lane, time)`` between the two event sets."""
    if len(jump_time) == 0 or len(switch_time) == 0:
        return 0
    a = np.rec.fromarrays([np.asarray(jump_lane), np.asarray(jump_time)])
    b = np.rec.fromarrays([np.asarray(switch_lane), np.asarray(switch_time)])
    return int(np.intersect1d(a, b).size)


__all__ = [
    "Event",
    "RegimePath",
    "WeightedPath",
    "HatSkeleton",
    "simulate_segment",
    "simulate_hat_chain",
    "hat_first_switch",
    "simulate_pieced",
    "simulate_direct",
    "simulate_killed",
    "likelihood_ratio",
    "weighted",
    "simulate_paths",
    "dump_paths_csv",
    "EventLog",
    "count_coincidences",
    "run_ensemble",
    "SimulationError",
]
