"""Vectorized event-driven Euler simulator for a block of paths.

Every lane carries its own exponential clocks for jump candidates and
switch epochs.  Within a grid step, lanes whose next event falls before the
step end are advanced to the event time, the event is applied, and the loop
repeats; afterwards all live lanes are advanced to the grid point.  Event
times are therefore exact clock times and the grid is refined locally.

Switching modes
    ``none``       no switching (single-regime segment)
    ``hat``        auxiliary chain: rate ``n0 - 1``, uniform target; the
                   log of ``q_{kl}(X(tau))`` is accumulated for the weight
    ``thinned``    target chain: candidates at rate ``qbar``, move to ``l``
                   with probability ``q_{kl}(X)/qbar``
    ``scheduled``  switch times and targets supplied per lane

Killing modes
    ``None``, ``"weight"`` (accumulate ``int q_k``) or ``"clock"``
    (exponential alarm with hazard ``q_k = -q_kk``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec
from .rng import BLOCK_SIZE, Streams, run_blocks

SWITCH_MODES = ("none", "hat", "thinned", "scheduled")
KILL_MODES = (None, "weight", "clock")

# relative slack when comparing an observed q_k(x) against qbar
QBAR_SLACK = 1e-12


class SimulationError(RuntimeError):
    """A path left the finite reals or broke a runtime precondition."""


def grid_times(t0: float, t1: float, h: float) -> np.ndarray:
    if not t1 > t0:
        raise ValueError("need t0 < t1")
    if not h > 0:
        raise ValueError("step h must be positive")
    n = max(1, int(math.ceil((t1 - t0) / h - 1e-9)))
    t = t0 + h * np.arange(n + 1)
    t[-1] = t1
    return t


class Observer:
    """Hook interface; subclasses override what they need."""

    def start(self, st: "BlockState") -> None:
        pass

    def substep(self, st, idx, s0, s1, x0) -> None:
        pass

    def jump(self, st, idx, t, u, accepted, x_pre) -> None:
        pass

    def switch(self, st, idx, t, k_from, k_to) -> None:
        pass

    def after_event(self, st, idx, t) -> None:
        pass

    def grid(self, st, i: int, t: float) -> None:
        pass

    def killed(self, st, idx, t) -> None:
        pass

    def result(self) -> dict:
        return {}


@dataclass
class BlockState:
    spec: ModelSpec
    x: np.ndarray
    k: np.ndarray
    s: np.ndarray  # current time per lane
    alive: np.ndarray
    q_cum: np.ndarray  # int_0^s q_{Lambda}(X) du
    qrate: np.ndarray  # q_{Lambda(s)}(X(s))
    log_switch: np.ndarray  # sum of log q_{k l}(X(tau)) over switches
    n_switch: np.ndarray
    n_jump: np.ndarray
    next_jump: np.ndarray
    next_sw: np.ndarray
    kill_level: np.ndarray
    kill_time: np.ndarray
    x0: np.ndarray
    t0: float
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]


def _exp(rng: np.random.Generator, rate: np.ndarray) -> np.ndarray:
    e = rng.standard_exponential(rate.shape[0])
    with np.errstate(divide="ignore"):
        return np.where(rate > 0, e / np.where(rate > 0, rate, 1.0), np.inf)


class BlockSimulator:
    def __init__(
        self,
        spec: ModelSpec,
        streams: Streams,
        switching: str = "hat",
        killing: str | None = None,
        observers=(),
        schedule: tuple[np.ndarray, np.ndarray] | None = None,
        track_q: bool | None = None,
    ):
        if switching not in SWITCH_MODES:
            raise ValueError(f"unknown switching mode {switching!r}")
        if killing not in KILL_MODES:
            raise ValueError(f"unknown killing mode {killing!r}")
        if switching == "scheduled" and schedule is None:
            raise ValueError("scheduled switching needs a schedule")
        self.spec = spec
        self.rs = streams
        self.mode = switching
        self.killing = killing
        self.obs = list(observers)
        self.schedule = schedule
        if track_q is None:
            track_q = switching in ("hat", "scheduled") or killing is not None
        self.track_q = track_q
        ker = spec.kernel
        self.jumps_on = ker.active
        self.mass = ker.mass
        self.small_gauss = ker.small is not None and ker.small.gaussian

    # -- helpers --------------------------------------------------------------
    def _qk(self, x, k):
        if self.spec.n0 == 1 and not self.track_q:
            return np.zeros(x.shape[0])
        return -self.spec.qdiag(x, k)

    def _switch_rate(self, k):
        n0 = self.spec.n0
        if self.mode in ("none", "scheduled") or n0 == 1:
            return np.zeros(k.shape[0])
        if self.mode == "hat":
            return np.full(k.shape[0], float(n0 - 1))
        return np.full(k.shape[0], float(self.spec.qbar))

    def _check_qbar(self, qk, x, t):
        bad = qk > self.spec.qbar * (1 + QBAR_SLACK) + QBAR_SLACK
        if np.any(bad):
            i = int(np.argmax(bad))
            raise SimulationError(
                f"q_k(x) = {qk[i]:.6g} exceeds qbar = {self.spec.qbar} at x={x[i].tolist()}, t={float(np.atleast_1d(t)[i]):.6g}"
            )

    # -- dynamics -------------------------------------------------------------
    def _advance(self, st: BlockState, idx: np.ndarray, s1: np.ndarray) -> None:
        if idx.size == 0:
            return
        spec, rng = self.spec, self.rs.diffusion
        d = spec.d
        s0 = st.s[idx]
        dt = s1 - s0
        x0 = st.x[idx]
        k = st.k[idx]
        b = spec.b(x0, k)
        if self.jumps_on:
            b = b - spec.kernel.compensator_at(x0, k, spec.eps0)
        sig = spec.sig(x0, k)
        xi = rng.standard_normal((idx.size, d))
        sq = np.sqrt(dt)
        if d == 1:
            noise = sig[:, 0, :1] * xi
        else:
            noise = np.einsum("nij,nj->ni", sig, xi)
        x1 = x0 + b * dt[:, None] + noise * sq[:, None]
        if self.small_gauss:
            m2 = spec.kernel.small.m2(x0, k)
            x1 = x1 + np.sqrt(m2 / d * dt)[:, None] * rng.standard_normal((idx.size, d))
        if not np.all(np.isfinite(x1)):
            i = int(np.argmax(~np.all(np.isfinite(x1), axis=1)))
            raise SimulationError(
                f"non-finite state on lane {int(idx[i])} between t={s0[i]:.6g} and t={s1[i]:.6g}; "
                f"last finite state {x0[i].tolist()}, regime {int(k[i])}"
            )
        s_end = s1
        if self.track_q:
            q1 = self._qk(x1, k)
            if self.killing is not None and np.any(q1 < -QBAR_SLACK):
                i = int(np.argmin(q1))
                raise SimulationError(f"positive q_kk = {-q1[i]:.6g} at x={x1[i].tolist()} in killed mode")
            dq = 0.5 * (st.qrate[idx] + q1) * dt
            qc0 = st.q_cum[idx]
            qc1 = qc0 + dq
            if self.killing == "clock":
                hit = qc1 >= st.kill_level[idx]
                if np.any(hit):
                    frac = np.where(hit, (st.kill_level[idx] - qc0) / np.where(dq > 0, dq, 1.0), 1.0)
                    frac = np.clip(frac, 0.0, 1.0)
                    x1 = np.where(hit[:, None], x0 + frac[:, None] * (x1 - x0), x1)
                    s_end = np.where(hit, s0 + frac * dt, s1)
                    qc1 = np.where(hit, st.kill_level[idx], qc1)
                    q1 = np.where(hit, self._qk(x1, k), q1)
                st.q_cum[idx] = qc1
                st.qrate[idx] = q1
                st.x[idx] = x1
                st.s[idx] = s_end
                for o in self.obs:
                    o.substep(st, idx, s0, s_end, x0)
                if np.any(hit):
                    dead = idx[hit]
                    st.alive[dead] = False
                    st.kill_time[dead] = s_end[hit]
                    for o in self.obs:
                        o.killed(st, dead, s_end[hit])
                return
            st.q_cum[idx] = qc1
            st.qrate[idx] = q1
        st.x[idx] = x1
        st.s[idx] = s_end
        for o in self.obs:
            o.substep(st, idx, s0, s_end, x0)

    def _jumps(self, st: BlockState, J: np.ndarray) -> None:
        spec, rng = self.spec, self.rs.jumps
        t = st.next_jump[J]
        k = st.k[J]
        u = spec.kernel.sample(rng, k)
        v = rng.random(J.size)
        x_pre = st.x[J]
        r = spec.kernel.accept(x_pre, k, u)
        acc = v <= r
        st.x[J[acc]] = x_pre[acc] + u[acc]
        st.n_jump[J[acc]] += 1
        st.next_jump[J] = t + _exp(rng, self.mass[k])
        # tie with the switch clock: jump first, then redraw the switch clock
        tie = st.next_sw[J] == t
        if np.any(tie) and self.mode in ("hat", "thinned"):
            T = J[tie]
            st.next_sw[T] = t[tie] + _exp(self.rs.switching, self._switch_rate(st.k[T]))
        if self.track_q and np.any(acc):
            A = J[acc]
            st.qrate[A] = self._qk(st.x[A], st.k[A])
        for o in self.obs:
            o.jump(st, J, t, u, acc, x_pre)

    def _switches(self, st: BlockState, S: np.ndarray) -> None:
        spec, rng = self.spec, self.rs.switching
        n0 = spec.n0
        t = st.next_sw[S]
        k = st.k[S]
        x = st.x[S]
        Qs = spec.Q(x)
        ar = np.arange(S.size)
        if self.mode == "hat":
            l = (k + 1 + rng.integers(0, n0 - 1, S.size)) % n0
            with np.errstate(divide="ignore"):
                st.log_switch[S] += np.log(Qs[ar, k, l])
            st.next_sw[S] = t + _exp(rng, self._switch_rate(k))
        elif self.mode == "thinned":
            row = Qs[ar, k, :].copy()
            qk = -row[ar, k]
            self._check_qbar(qk, x, t)
            row[ar, k] = 0.0
            cum = np.cumsum(row, axis=1)
            w = rng.random(S.size) * spec.qbar
            move = w < cum[:, -1]
            l = np.where(move, np.argmax(cum > w[:, None], axis=1), k)
            st.next_sw[S] = t + _exp(rng, self._switch_rate(k))
        else:
            times, targets = self.schedule
            p = st.extra["sched_ptr"]
            l = targets[S, p[S]]
            with np.errstate(divide="ignore"):
                st.log_switch[S] += np.log(Qs[ar, k, l])
            p[S] += 1
            nxt = np.where(p[S] < times.shape[1], times[S, np.minimum(p[S], times.shape[1] - 1)], np.inf)
            st.next_sw[S] = nxt
        changed = l != k
        st.k[S] = l
        st.n_switch[S[changed]] += 1
        C = S[changed]
        if C.size:
            # jump intensity depends on the regime; memorylessness allows a redraw
            st.next_jump[C] = t[changed] + _exp(self.rs.jumps, self.mass[st.k[C]])
            if self.track_q:
                st.qrate[C] = self._qk(st.x[C], st.k[C])
        for o in self.obs:
            o.switch(st, S, t, k, l)

    # -- driver ---------------------------------------------------------------
    def run(self, x0: np.ndarray, k0: np.ndarray, times: np.ndarray) -> BlockState:
        spec = self.spec
        n = x0.shape[0]
        t0 = float(times[0])
        x = np.array(x0, dtype=float, copy=True).reshape(n, spec.d)
        k = np.array(k0, dtype=np.int64, copy=True).reshape(n)
        st = BlockState(
            spec=spec,
            x=x,
            k=k,
            s=np.full(n, t0),
            alive=np.ones(n, dtype=bool),
            q_cum=np.zeros(n),
            qrate=self._qk(x, k) if self.track_q else np.zeros(n),
            log_switch=np.zeros(n),
            n_switch=np.zeros(n, dtype=np.int64),
            n_jump=np.zeros(n, dtype=np.int64),
            next_jump=t0 + _exp(self.rs.jumps, self.mass[k]),
            next_sw=np.full(n, np.inf),
            kill_level=self.rs.killing.standard_exponential(n) if self.killing == "clock" else np.full(n, np.inf),
            kill_time=np.full(n, np.inf),
            x0=x.copy(),
            t0=t0,
        )
        if self.mode == "scheduled":
            stimes, _ = self.schedule
            st.extra["sched_ptr"] = np.zeros(n, dtype=np.int64)
            st.next_sw = stimes[:, 0].astype(float).copy() if stimes.shape[1] else np.full(n, np.inf)
        else:
            st.next_sw = t0 + _exp(self.rs.switching, self._switch_rate(k))
        if self.killing is not None and np.any(st.qrate < -QBAR_SLACK):
            raise SimulationError("positive q_kk at the start point in killed mode")
        for o in self.obs:
            o.start(st)
        for o in self.obs:
            o.grid(st, 0, t0)
        for i in range(1, times.shape[0]):
            t_next = float(times[i])
            while True:
                nxt = np.minimum(st.next_jump, st.next_sw)
                idx = np.nonzero(st.alive & (nxt < t_next))[0]
                if idx.size == 0:
                    break
                self._advance(st, idx, nxt[idx])
                idx = idx[st.alive[idx]]
                if idx.size == 0:
                    continue
                t_ev = st.s[idx]
                is_jump = st.next_jump[idx] <= st.next_sw[idx]
                J = idx[is_jump]
                if J.size:
                    self._jumps(st, J)
                S = idx[~is_jump]
                if S.size:
                    self._switches(st, S)
                for o in self.obs:
                    o.after_event(st, idx, t_ev)
            live = np.nonzero(st.alive)[0]
            self._advance(st, live, np.full(live.size, t_next))
            for o in self.obs:
                o.grid(st, i, t_next)
        return st


# ----------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleResult:
    """Per-lane terminal data of an ensemble, lanes ordered by path index."""

    x: np.ndarray
    k: np.ndarray
    alive: np.ndarray
    q_cum: np.ndarray
    log_switch: np.ndarray
    n_switch: np.ndarray
    n_jump: np.ndarray
    kill_time: np.ndarray
    t0: float
    T: float
    n0: int
    seed: int
    obs: dict

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def log_weight(self) -> np.ndarray:
        """``log M_T`` for paths driven by the auxiliary chain."""
        return self.log_switch - self.q_cum + (self.n0 - 1) * (self.T - self.t0)

    def weight(self) -> np.ndarray:
        return np.exp(self.log_weight())

    def survival_weight(self) -> np.ndarray:
        return np.exp(-self.q_cum)


def _lanes(a, n, shape_tail, dtype):
    a = np.asarray(a, dtype=dtype)
    if a.ndim == len(shape_tail):
        return np.broadcast_to(a, (n,) + shape_tail)
    if a.shape[0] != n:
        raise ValueError("per-lane start values need one row per path")
    return a


def run_ensemble(
    spec: ModelSpec,
    x0,
    k0,
    T: float,
    h: float,
    n_paths: int,
    seed: int,
    switching: str = "hat",
    killing: str | None = None,
    observers=None,
    schedule=None,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
    t0: float = 0.0,
    track_q: bool | None = None,
) -> EnsembleResult:
    """Simulate ``n_paths`` paths in fixed blocks and gather per-lane results.

    ``observers(start, stop)`` builds the observer list of one block;
    ``schedule(start, stop, streams)`` returns the ``(times, targets)`` arrays
    of a block in scheduled mode.  ``x0`` and ``k0`` may be per lane.
    """
    if int(n_paths) < 1:
        raise ValueError("n_paths must be >= 1")
    times = grid_times(t0, T, h)
    X0 = np.asarray(x0, dtype=float)
    X0 = _lanes(X0 if X0.ndim > 1 else X0.reshape(spec.d), n_paths, (spec.d,), float)
    K0 = _lanes(k0, n_paths, (), np.int64)
    if np.any((K0 < 0) | (K0 >= spec.n0)):
        raise ValueError(f"start regime out of range 0..{spec.n0 - 1}")

    def job(b, start, stop, streams):
        obs = observers(start, stop) if observers is not None else []
        sched = schedule(start, stop, streams) if schedule is not None else None
        sim = BlockSimulator(spec, streams, switching, killing, obs, sched, track_q)
        st = sim.run(X0[start:stop], K0[start:stop], times)
        merged = {}
        for o in obs:
            merged.update(o.result())
        return st, merged

    parts = run_blocks(job, n_paths, seed, workers, block_size)
    cat = lambda name: np.concatenate([getattr(p[0], name) for p in parts])
    obs = {}
    if parts[0][1]:
        for key in parts[0][1]:
            vals = [p[1][key] for p in parts]
            if isinstance(vals[0], np.ndarray):
                obs[key] = np.concatenate(vals)
            else:
                obs[key] = [v for part in vals for v in part]
    return EnsembleResult(
        x=cat("x"),
        k=cat("k"),
        alive=cat("alive"),
        q_cum=cat("q_cum"),
        log_switch=cat("log_switch"),
        n_switch=cat("n_switch"),
        n_jump=cat("n_jump"),
        kill_time=cat("kill_time"),
        t0=t0,
        T=float(T),
        n0=spec.n0,
        seed=seed,
        obs=obs,
    )


# ----------------------------------------------------------------------------
# reusable observers


class TrapezoidIntegral(Observer):
    """Per-lane ``int g(st, idx, s) ds`` along the event-refined grid.

    ``g(st, idx, s)`` is evaluated at the current state of lanes ``idx`` at
    time ``s``; it is refreshed after every event so that discontinuities at
    jumps and switches are respected.
    """

    def __init__(self, key: str, g, n: int, dtype=float):
        self.key = key
        self.g = g
        self.acc = np.zeros(n, dtype=dtype)
        self.cur = np.zeros(n, dtype=dtype)

    def start(self, st):
        self.cur[:] = self.g(st, np.arange(st.n), st.s)

    def substep(self, st, idx, s0, s1, x0):
        new = self.g(st, idx, s1)
        self.acc[idx] += 0.5 * (self.cur[idx] + new) * (s1 - s0)
        self.cur[idx] = new

    def after_event(self, st, idx, t):
        idx = idx[st.alive[idx]]
        if idx.size:
            self.cur[idx] = self.g(st, idx, st.s[idx])

    def result(self):
        return {self.key: self.acc}


class Snapshot(Observer):
    """Copies of state, regime and ``q_cum`` at chosen grid indices."""

    def __init__(self, key: str, grid_indices, extra=None):
        self.key = key
        self.want = {int(i): j for j, i in enumerate(grid_indices)}
        self.extra = extra
        self.xs = None

    def start(self, st):
        m = len(self.want)
        self.xs = np.zeros((st.n, m, st.spec.d))
        self.ks = np.zeros((st.n, m), dtype=np.int64)
        self.qc = np.zeros((st.n, m))
        self.ls = np.zeros((st.n, m))
        self.al = np.zeros((st.n, m), dtype=bool)
        self.ex = {}

    def grid(self, st, i, t):
        j = self.want.get(i)
        if j is None:
            return
        self.xs[:, j] = st.x
        self.ks[:, j] = st.k
        self.qc[:, j] = st.q_cum
        self.ls[:, j] = st.log_switch
        self.al[:, j] = st.alive
        if self.extra is not None:
            for name, val in self.extra(st).items():
                self.ex.setdefault(name, np.zeros((st.n, len(self.want)), dtype=np.asarray(val).dtype))[:, j] = val

    def result(self):
        out = {
            f"{self.key}_x": self.xs,
            f"{self.key}_k": self.ks,
            f"{self.key}_qcum": self.qc,
            f"{self.key}_logsw": self.ls,
            f"{self.key}_alive": self.al,
        }
        for name, val in self.ex.items():
            out[f"{self.key}_{name}"] = val
        return out
