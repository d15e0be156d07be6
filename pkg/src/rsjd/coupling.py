"""Coupled pairs of single-regime processes and the analytic contraction bounds.

Two coupling kinds are available for a fixed regime ``k``:

* ``synchronous``: both copies use the same Gaussian increment;
* ``reflection``: the isotropic part ``sqrt(lambda0) dW`` of ``z`` is the
  mirror image of that of ``x`` across the hyperplane orthogonal to
  ``x - z``; the remaining factor ``sigma_lambda0`` shares one draw.

Jumps are coupled through one dominating candidate stream: a candidate
``u`` with uniform mark ``v`` moves ``x`` if ``v <= r(x, k, u)`` and ``z`` if
``v <= r(z, k, u)``, which realizes the common part and the two positive
parts of the kernel difference.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .engine import SimulationError, grid_times
from .estimate import MCEstimate
from .model import ModelError, ModelSpec, Modulus
from .rng import BLOCK_SIZE, Streams, as_streams, run_blocks

COUPLING_KINDS = ("synchronous", "reflection")
PSD_TOL = 1e-10


class CouplingError(ModelError):
    """The model does not admit the requested coupling."""


@dataclass(frozen=True)
class CoupledPath:
    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    coupling_time: float
    glued: np.ndarray

    @property
    def distance(self) -> np.ndarray:
        return np.linalg.norm(self.x - self.z, axis=1)


@dataclass(frozen=True)
class ContractionParams:
    kappa: float
    delta: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.delta > 0):
            raise ValueError("contraction parameters must be positive")

    @staticmethod
    def F(r):
        r = np.asarray(r, dtype=float)
        return r / (1.0 + r)


# ----------------------------------------------------------------------------
# reflection algebra


def psd_sqrt_shifted(a: np.ndarray, lam0: float) -> np.ndarray:
    """Symmetric PSD square root of ``a - lam0 I`` for a batch ``(n, d, d)``."""
    d = a.shape[1]
    m = a - lam0 * np.eye(d)
    if d == 1:
        v = m[:, 0, 0]
        if np.any(v < -PSD_TOL):
            raise CouplingError(f"a - lambda0 I is not PSD: eigenvalue {float(v.min()):.3g}")
        return np.sqrt(np.clip(v, 0.0, None))[:, None, None]
    w, vec = np.linalg.eigh(m)
    if np.any(w < -PSD_TOL):
        raise CouplingError(f"a - lambda0 I is not PSD: eigenvalue {float(w.min()):.3g}")
    return (vec * np.sqrt(np.clip(w, 0.0, None))[:, None, :]) @ np.swapaxes(vec, 1, 2)


def reflection_joint_matrix(spec: ModelSpec, x, z, k: int) -> np.ndarray:
    """Joint diffusion matrix of the reflection coupling at ``(x, z)``, shape ``(n, 2d, 2d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n, d = x.shape
    kk = np.full(n, k)
    ax, az = spec.a(x, kk), spec.a(z, kk)
    sx = psd_sqrt_shifted(ax, spec.lambda0)
    sz = psd_sqrt_shifted(az, spec.lambda0)
    e = x - z
    e = e / np.linalg.norm(e, axis=1, keepdims=True)
    R = np.eye(d) - 2.0 * e[:, :, None] * e[:, None, :]
    c = spec.lambda0 * R + sx @ np.swapaxes(sz, 1, 2)
    top = np.concatenate([ax, c], axis=2)
    bot = np.concatenate([np.swapaxes(c, 1, 2), az], axis=2)
    return np.concatenate([top, bot], axis=1)


# ----------------------------------------------------------------------------
# pair simulator


class PairSimulator:
    def __init__(self, spec: ModelSpec, k: int, kind: str, streams: Streams, glue_tol, record=False, bridge=True):
        if kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {kind!r}")
        if not 0 <= k < spec.n0:
            raise ModelError(f"regime {k} out of range 0..{spec.n0 - 1}")
        if spec.kernel.active and not spec.kernel.shared:
            raise CouplingError("jump coupling needs a dominating sampler shared by both copies")
        if kind == "reflection" and not spec.lambda0 > 0:
            raise CouplingError("reflection coupling needs lambda0 > 0")
        self.spec, self.k, self.kind, self.rs = spec, int(k), kind, streams
        self.glue_tol = glue_tol
        self.record = record
        self.bridge = bridge
        self.mass = float(spec.kernel.mass[self.k])

    def _step(self, idx, s1):
        spec, rng = self.spec, self.rs.diffusion
        d = spec.d
        s0 = self.s[idx]
        dt = s1 - s0
        sq = np.sqrt(dt)[:, None]
        x0, z0 = self.x[idx], self.z[idx]
        g = self.glued[idx]
        kk = np.full(idx.size, self.k)
        bx = spec.b(x0, kk)
        bz = spec.b(z0, kk)
        if spec.kernel.active:
            bx = bx - spec.kernel.compensator_at(x0, kk, spec.eps0)
            bz = bz - spec.kernel.compensator_at(z0, kk, spec.eps0)
        xi = rng.standard_normal((idx.size, d))
        if self.kind == "synchronous":
            sx, sz = spec.sig(x0, kk), spec.sig(z0, kk)
            dx = bx * dt[:, None] + np.einsum("nij,nj->ni", sx, xi) * sq
            dz = bz * dt[:, None] + np.einsum("nij,nj->ni", sz, xi) * sq
        else:
            xi2 = rng.standard_normal((idx.size, d))
            lam = spec.lambda0
            slx = psd_sqrt_shifted(spec.a(x0, kk), lam)
            slz = psd_sqrt_shifted(spec.a(z0, kk), lam)
            diff = x0 - z0
            r_prev = np.linalg.norm(diff, axis=1)
            e = diff / np.where(r_prev > 0, r_prev, 1.0)[:, None]
            refl = xi - 2.0 * e * np.sum(e * xi, axis=1, keepdims=True)
            rl = math.sqrt(lam)
            dx = bx * dt[:, None] + (rl * xi + np.einsum("nij,nj->ni", slx, xi2)) * sq
            dz = bz * dt[:, None] + (rl * refl + np.einsum("nij,nj->ni", slz, xi2)) * sq
        if spec.kernel.small is not None and spec.kernel.small.gaussian:
            eta = rng.standard_normal((idx.size, d))
            dx = dx + np.sqrt(spec.kernel.small.m2(x0, kk) / d * dt)[:, None] * eta
            dz = dz + np.sqrt(spec.kernel.small.m2(z0, kk) / d * dt)[:, None] * eta
        x1 = x0 + dx
        z1 = np.where(g[:, None], x1, z0 + dz)
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(z1))):
            raise SimulationError("non-finite state in coupled pair")
        hit = np.linalg.norm(x1 - z1, axis=1) <= self.glue_tol[idx]
        if self.kind == "reflection" and self.bridge:
            # continuous-time meeting inside the step, via the bridge of the
            # projected difference
            live = ~g & ~hit
            if np.any(live):
                proj = np.sum((x1 - z1) * e, axis=1)
                A = 4.0 * lam + np.sum(np.einsum("nji,nj->ni", slx - slz, e) ** 2, axis=1)
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    p = np.where(proj <= 0, 1.0, np.exp(-2.0 * r_prev * proj / (A * dt)))
                u = self.rs.aux.random(idx.size)
                hit = hit | (live & (u < p))
        self.x[idx] = x1
        self.z[idx] = z1
        self.s[idx] = s1
        new = idx[hit & ~g]
        if new.size:
            self.glued[new] = True
            self.ctime[new] = s1[hit & ~g]
            self.z[new] = self.x[new]

    def _jumps(self, J):
        spec, rng = self.spec, self.rs.jumps
        t = self.next_jump[J]
        kk = np.full(J.size, self.k)
        u = spec.kernel.sample(rng, kk)
        v = rng.random(J.size)
        rx = spec.kernel.accept(self.x[J], kk, u)
        rz = spec.kernel.accept(self.z[J], kk, u)
        jx, jz = v <= rx, v <= rz
        g = self.glued[J]
        jz = np.where(g, jx, jz)
        self.x[J] += u * jx[:, None]
        self.z[J] += u * jz[:, None]
        self.next_jump[J] = t + rng.standard_exponential(J.size) / self.mass
        cl = (np.linalg.norm(self.x[J] - self.z[J], axis=1) <= self.glue_tol[J]) & ~g
        if np.any(cl):
            new = J[cl]
            self.glued[new] = True
            self.ctime[new] = t[cl]
            self.z[new] = self.x[new]

    def run(self, x0: np.ndarray, z0: np.ndarray, times: np.ndarray, want: dict[int, int] | None = None):
        n = x0.shape[0]
        self.x = np.array(x0, dtype=float, copy=True)
        self.z = np.array(z0, dtype=float, copy=True)
        self.s = np.full(n, float(times[0]))
        r0 = np.linalg.norm(self.x - self.z, axis=1)
        if self.glue_tol is None:
            self.glue_tol = 1e-6 * r0
        self.glue_tol = np.broadcast_to(np.asarray(self.glue_tol, dtype=float), (n,)).copy()
        self.glued = r0 <= self.glue_tol
        self.ctime = np.where(self.glued, float(times[0]), np.inf)
        self.z[self.glued] = self.x[self.glued]
        if self.mass > 0:
            self.next_jump = times[0] + self.rs.jumps.standard_exponential(n) / self.mass
        else:
            self.next_jump = np.full(n, np.inf)
        m = len(want) if want is not None else times.shape[0]
        dist = np.zeros((n, m))
        xs = zs = gl = None
        if self.record:
            xs = np.zeros((times.shape[0], n, self.spec.d))
            zs = np.zeros_like(xs)
            gl = np.zeros((times.shape[0], n), dtype=bool)

        def snap(i):
            j = i if want is None else want.get(i)
            if j is not None:
                dist[:, j] = np.linalg.norm(self.x - self.z, axis=1)
            if self.record:
                xs[i], zs[i], gl[i] = self.x, self.z, self.glued

        snap(0)
        allidx = np.arange(n)
        for i in range(1, times.shape[0]):
            t_next = float(times[i])
            while True:
                J = np.nonzero(self.next_jump < t_next)[0]
                if J.size == 0:
                    break
                self._step(J, self.next_jump[J])
                self._jumps(J)
            self._step(allidx, np.full(n, t_next))
            snap(i)
        return dist, xs, zs, gl


# ----------------------------------------------------------------------------
# public simulation API


def _pair(spec, k, x0, z0, T, h, rng_stream, kind, glue_tol):
    x0 = np.asarray(x0, dtype=float).reshape(1, spec.d)
    z0 = np.asarray(z0, dtype=float).reshape(1, spec.d)
    times = grid_times(0.0, T, h)
    sim = PairSimulator(spec, k, kind, as_streams(rng_stream), glue_tol, record=True)
    _, xs, zs, gl = sim.run(x0, z0, times)
    return CoupledPath(times, xs[:, 0], zs[:, 0], float(sim.ctime[0]), gl[:, 0])


def couple_synchronous(spec: ModelSpec, k: int, x0, z0, T: float, h: float, rng_stream, glue_tol=None) -> CoupledPath:
    return _pair(spec, k, x0, z0, T, h, rng_stream, "synchronous", glue_tol)


def couple_reflection(spec: ModelSpec, k: int, x0, z0, T: float, h: float, glue_tol, rng_stream) -> CoupledPath:
    return _pair(spec, k, x0, z0, T, h, rng_stream, "reflection", glue_tol)


@dataclass
class CoupledEnsemble:
    t: np.ndarray  # snapshot times
    dist: np.ndarray  # (n, len(t))
    coupling_time: np.ndarray
    x: np.ndarray
    z: np.ndarray
    seed: int

    def survival(self, t: float) -> MCEstimate:
        return MCEstimate.from_samples((self.coupling_time > t).astype(float), seed=self.seed)


def couple_ensemble(
    spec: ModelSpec,
    k: int,
    x0,
    z0,
    t_grid,
    n_paths: int,
    kind: str,
    seed: int,
    h: float = 1e-3,
    glue_tol=None,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
    bridge: bool = True,
) -> CoupledEnsemble:
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    T = float(t_grid.max())
    times = grid_times(0.0, T, h) if T > 0 else np.array([0.0])
    want = {}
    for j, t in enumerate(t_grid):
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, T):
            raise ValueError(f"t = {t} is not on the step-{h} grid")
        want[i] = j
    X0 = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1, spec.d), (n_paths, spec.d))
    Z0 = np.broadcast_to(np.asarray(z0, dtype=float).reshape(-1, spec.d), (n_paths, spec.d))

    def job(b, start, stop, streams):
        sim = PairSimulator(spec, k, kind, streams, glue_tol, bridge=bridge)
        if times.shape[0] == 1:
            r = np.linalg.norm(X0[start:stop] - Z0[start:stop], axis=1)[:, None]
            return r, np.where(r[:, 0] == 0, 0.0, np.inf), X0[start:stop].copy(), Z0[start:stop].copy()
        dist, *_ = sim.run(X0[start:stop], Z0[start:stop], times, want)
        return dist, sim.ctime, sim.x, sim.z

    parts = run_blocks(job, n_paths, seed, workers, block_size)
    return CoupledEnsemble(
        t_grid,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        np.concatenate([p[3] for p in parts]),
        seed,
    )


def empirical_mean_distance(
    spec: ModelSpec, k: int, x0, z0, t_grid, n_paths: int, coupling_kind: str, seeds: int, h: float = 1e-3, **kw
) -> list[MCEstimate]:
    """Mean of ``|X(t) - Z(t)|`` under the chosen coupling, one estimate per time."""
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    ens = couple_ensemble(spec, k, x0, z0, t_grid, n_paths, coupling_kind, seeds, h=h, **kw)
    return [MCEstimate.from_samples(ens.dist[:, j], seed=seeds) for j in range(ens.dist.shape[1])]


# ----------------------------------------------------------------------------
# contraction machinery


def g_machinery(rho: Modulus):
    """``G(r) = int_1^r ds / rho(s)`` and its inverse."""
    kind, p = rho.kind, rho.params
    if kind == "zero":
        raise ModelError("rho must be positive on (0, inf)")
    if kind == "linear" or (kind == "power" and p.get("p", 1.0) == 1.0):
        c = float(p.get("c", 1.0))
        return (lambda r: math.log(r) / c), (lambda y: math.exp(c * y))
    if kind == "constant":
        c = float(p["c"])
        return (lambda r: (r - 1.0) / c), (lambda y: max(1.0 + c * y, 0.0))
    if kind == "power":
        c, q = float(p.get("c", 1.0)), float(p["p"])
        e = 1.0 - q

        def G(r):
            return (r**e - 1.0) / (c * e)

        def Gi(y):
            base = 1.0 + c * e * y
            if base <= 0:
                return 0.0 if e > 0 else math.inf
            return base ** (1.0 / e)

        return G, Gi
    if kind == "log":
        c, cut = float(p.get("c", 1.0)), float(p.get("cutoff", math.exp(-1.0)))
        m = c * cut * math.log(1.0 / cut)
        g_cut = (cut - 1.0) / m
        llc = math.log(math.log(1.0 / cut))

        def G(r):
            if r >= cut:
                return (r - 1.0) / m
            if r <= 0:
                return -math.inf
            return g_cut - (math.log(math.log(1.0 / r)) - llc) / c

        def Gi(y):
            if y >= g_cut:
                return 1.0 + m * y
            return math.exp(-math.exp(llc - c * (y - g_cut)))

        return G, Gi
    return _numeric_g(rho)


def _numeric_g(rho: Modulus):
    f = lambda s: 1.0 / float(rho(s))

    def G(r):
        r = float(r)
        if r == 1.0:
            return 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, _ = integrate.quad(f, min(r, 1.0), max(r, 1.0), limit=200, epsabs=1e-13, epsrel=1e-12)
            except integrate.IntegrationWarning as w:
                warnings.warn(f"1/rho is hard to integrate on [{r}, 1]: {w}", RuntimeWarning, stacklevel=2)
                val, _ = integrate.quad(f, min(r, 1.0), max(r, 1.0), limit=200)
        return val if r > 1.0 else -val

    def Gi(y):
        if y == 0.0:
            return 1.0
        lo, hi = (1.0, 2.0) if y > 0 else (0.5, 1.0)
        if y > 0:
            while G(hi) < y:
                lo, hi = hi, hi * 2.0
                if hi > 1e300:
                    return math.inf
        else:
            while G(lo) > y:
                lo, hi = lo / 2.0, lo
                if lo < 1e-300:
                    return 0.0
        return optimize.brentq(lambda r: G(r) - y, lo, hi, xtol=1e-300, rtol=1e-13, maxiter=500)

    return G, Gi


def wasserstein_bound(rho: Modulus, H: float, r0: float, t: float) -> float:
    """``G^{-1}(G(r0) + 3 H t)``, an upper bound on ``E|X(t) - Z(t)|``."""
    if r0 < 0 or t < 0:
        raise ValueError("need r0 >= 0 and t >= 0")
    if r0 == 0:
        return 0.0
    if t == 0:
        return float(r0)
    G, Gi = g_machinery(rho)
    return float(Gi(G(r0) + 3.0 * H * t))


CONTRACTION_GRID = 8000


def contraction_params(spec: ModelSpec, k: int = 0, grid: int = CONTRACTION_GRID) -> ContractionParams:
    """Radius ``delta`` and margin ``kappa`` of the reflection-coupling contraction."""
    if not spec.lambda0 > 0:
        raise CouplingError("contraction needs lambda0 > 0")
    if spec.theta_mod is None:
        raise CouplingError("contraction needs the reduced-diffusion modulus theta_mod")
    d0, lam, H = spec.delta0, spec.lambda0, spec.H
    r = d0 * np.arange(1, grid + 1) / grid
    th = np.asarray(spec.theta_mod(r), dtype=float)
    cap = 2.0 * lam / (1.0 + d0) ** 3
    ok = 2.0 * H * th <= cap
    if not ok[0]:
        raise CouplingError("no contraction radius: 2 H theta(r) exceeds 2 lambda0/(1+delta0)^3 on the whole grid")
    last = grid - 1 if ok.all() else int(np.argmin(ok)) - 1
    delta = float(r[last])
    kappa = -float(np.max(-4.0 * lam / (1.0 + d0) ** 3 + 2.0 * H * th[: last + 1]))
    return ContractionParams(kappa, delta)


def coupling_tail_bound(params: ContractionParams, r0: float, t: float) -> float:
    """``min(1, (1/(t kappa) + 1/F(delta)) F(r0))``."""
    if not t > 0:
        raise ValueError("t must be positive")
    F = ContractionParams.F
    return float(min(1.0, (1.0 / (t * params.kappa) + 1.0 / F(params.delta)) * F(r0)))
