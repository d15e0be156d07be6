"""Resolvents, killed resolvents and the switching series expansions.

Functions ``f`` on ``R^d x S`` are vectorized callables ``f(x, k)`` with
``x`` of shape ``(n, d)`` and integer ``k`` of shape ``(n,)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Callable

import numpy as np
from scipy import stats

from .engine import Observer, TrapezoidIntegral, grid_times, run_ensemble
from .estimate import MCEstimate
from .model import ModelError, ModelSpec
from .rng import subseed

PIECED_WEIGHTED = "pieced_weighted"
DIRECT = "direct"

DEFAULT_TAIL = 1e-3  # relative to ||f|| / alpha
SERIES_TAIL = 1e-5


class TailError(ValueError):
    """The requested truncation horizon cannot meet the tail tolerance."""


def horizon(alpha: float, f_sup: float, tail_tol: float | None = None, t_max: float | None = None) -> tuple[float, float]:
    """``(t_max, tail)`` with ``tail = exp(-alpha t_max) ||f|| / alpha <= tail_tol``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    scale = f_sup / alpha
    if tail_tol is None:
        tail_tol = DEFAULT_TAIL * scale
    if scale == 0:
        return (t_max if t_max is not None else 1.0), 0.0
    if t_max is None:
        t_max = max(math.log(scale / tail_tol), 0.0) / alpha if tail_tol < scale else 0.0
        t_max = max(t_max, 1e-9)
    tail = math.exp(-alpha * t_max) * scale
    if tail > tail_tol * (1 + 1e-12):
        raise TailError(
            f"t_max = {t_max} leaves a tail of {tail:.3g} > tail_tol = {tail_tol:.3g}; "
            f"need t_max >= {math.log(scale / tail_tol) / alpha:.4g}"
        )
    return float(t_max), float(tail)


@dataclass(frozen=True)
class ResolventQuery:
    f: Callable
    alpha: float
    x: tuple
    k: int
    n_paths: int
    seed: int
    spec: ModelSpec
    f_sup: float = 1.0  # bound on |f|
    t_max: float | None = None
    tail_tol: float | None = None
    h: float = 1e-3

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.t_max is not None and not math.isfinite(self.t_max):
            raise ValueError("t_max must be finite")


def _discounted(f, alpha, weighted: bool, n0: int):
    def g(st, idx, s):
        val = np.exp(-alpha * s) * f(st.x[idx], st.k[idx])
        if weighted:
            val = val * np.exp(st.log_switch[idx] - st.q_cum[idx] + (n0 - 1) * (s - st.t0))
        return val

    return g


def resolvent_mc(q: ResolventQuery, simulator: str = DIRECT, workers: int = 1) -> MCEstimate:
    """``E int_0^t_max e^{-alpha t} f(X, Lambda) dt`` by trapezoid along each path."""
    if simulator not in (PIECED_WEIGHTED, DIRECT):
        raise ValueError(f"unknown simulator {simulator!r}")
    spec = q.spec
    t_max, tail = horizon(q.alpha, q.f_sup, q.tail_tol, q.t_max)
    weighted = simulator == PIECED_WEIGHTED
    g = _discounted(q.f, q.alpha, weighted, spec.n0)
    res = run_ensemble(
        spec,
        q.x,
        q.k,
        t_max,
        q.h,
        q.n_paths,
        q.seed,
        switching="hat" if weighted else "thinned",
        observers=lambda a, b: [TrapezoidIntegral("I", g, b - a)],
        workers=workers,
    )
    return MCEstimate.from_samples(res.obs["I"], seed=q.seed, bias_bound=tail)


def killed_resolvent_mc(
    spec: ModelSpec,
    k: int,
    g: Callable,
    alpha: float,
    x,
    t_max: float | None,
    n_paths: int,
    seed,
    h: float = 1e-3,
    g_sup: float = 1.0,
    tail_tol: float | None = None,
    workers: int = 1,
) -> MCEstimate:
    """``G_alpha^{(k)} g(x)`` of the process killed at rate ``-q_kk``, WEIGHT mode.

    ``g`` takes ``x`` of shape ``(n, d)`` only.
    """
    t_max, tail = horizon(alpha, g_sup, tail_tol, t_max)

    def integrand(st, idx, s):
        return np.exp(-alpha * s - st.q_cum[idx]) * g(st.x[idx])

    res = run_ensemble(
        spec,
        x,
        k,
        t_max,
        h,
        n_paths,
        seed,
        switching="none",
        killing="weight",
        observers=lambda a, b: [TrapezoidIntegral("I", integrand, b - a)],
        workers=workers,
    )
    return MCEstimate.from_samples(res.obs["I"], seed=seed, bias_bound=tail)


class _KillRecorder(Observer):
    def __init__(self, n, alpha, phi):
        self.v = np.zeros(n)
        self.alpha, self.phi = alpha, phi

    def killed(self, st, idx, t):
        self.v[idx] = np.exp(-self.alpha * t) * self.phi(st.x[idx])

    def result(self):
        return {"kill_value": self.v}


def killing_identity_check(
    spec: ModelSpec,
    k: int,
    phi: Callable,
    alpha: float,
    x,
    n_paths: int,
    seed,
    h: float = 1e-3,
    phi_sup: float = 1.0,
    t_max: float | None = None,
    workers: int = 1,
) -> tuple[MCEstimate, MCEstimate]:
    """Both sides of ``E[e^{-alpha zeta} phi(X(zeta-))] = G_alpha^{(k)}(q phi)(x)``.

    The left side uses CLOCK killing, the right side WEIGHT killing with an
    independent seed.  ``phi`` takes ``x`` only and ``q = -q_kk``.
    """
    qbar = spec.qbar
    t_max, tail = horizon(alpha, phi_sup * max(qbar, alpha), None, t_max)
    res = run_ensemble(
        spec,
        x,
        k,
        t_max,
        h,
        n_paths,
        seed,
        switching="none",
        killing="clock",
        observers=lambda a, b: [_KillRecorder(b - a, alpha, phi)],
        workers=workers,
    )
    lhs = MCEstimate.from_samples(res.obs["kill_value"], seed=seed, bias_bound=math.exp(-alpha * t_max) * phi_sup)
    kk = int(k)

    def qphi(y):
        return -spec.qdiag(y, np.full(y.shape[0], kk)) * phi(y)

    rhs = killed_resolvent_mc(
        spec, k, qphi, alpha, x, t_max, n_paths, subseed(seed, 1), h=h, g_sup=phi_sup * qbar, tail_tol=math.inf, workers=workers
    )
    rhs = MCEstimate(rhs.value, rhs.se, rhs.n, rhs.seed, math.exp(-alpha * t_max) * phi_sup * qbar / alpha)
    return lhs, rhs


def alpha_one(spec: ModelSpec) -> float:
    """``2 (n0 - 1) H``: the series converges geometrically for ``alpha >= alpha_one``."""
    return 2.0 * (spec.n0 - 1) * spec.H


# ----------------------------------------------------------------------------
# resolvent series on a mesh


@dataclass(frozen=True)
class Mesh:
    axes: tuple[np.ndarray, ...]

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def nodes(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @property
    def size(self) -> int:
        return int(np.prod([a.size for a in self.axes]))

    def weights(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multilinear interpolation: ``(node index, weight)`` arrays of shape ``(n, 2^d)``.

        Points outside the mesh are clamped to its boundary.
        """
        n = x.shape[0]
        idx = np.zeros((n, 1), dtype=np.int64)
        w = np.ones((n, 1))
        stride = 1
        for ax_i in range(self.d - 1, -1, -1):
            a = self.axes[ax_i]
            xc = np.clip(x[:, ax_i], a[0], a[-1])
            if self._uniform[ax_i]:
                step = (a[-1] - a[0]) / (a.size - 1)
                j = np.minimum(((xc - a[0]) / step).astype(np.int64), a.size - 2)
            else:
                j = np.clip(np.searchsorted(a, xc, side="right") - 1, 0, a.size - 2)
            t = (xc - a[j]) / (a[j + 1] - a[j])
            idx = np.concatenate([idx + (j * stride)[:, None], idx + ((j + 1) * stride)[:, None]], axis=1)
            w = np.concatenate([w * (1 - t)[:, None], w * t[:, None]], axis=1)
            stride *= a.size
        return idx, w

    @cached_property
    def _uniform(self) -> tuple[bool, ...]:
        return tuple(bool(a.size > 2 and np.allclose(np.diff(a), a[1] - a[0], rtol=1e-12, atol=0)) for a in self.axes)


def default_mesh(spec: ModelSpec, x, alpha: float, nodes: int | None = None, half_width: float | None = None) -> Mesh:
    """Mesh centred at ``x`` spanning six diffusive standard deviations ``sigma / sqrt(alpha)``."""
    if spec.d > 2:
        raise ModelError("mesh-based series support d <= 2")
    x = np.asarray(x, dtype=float).reshape(spec.d)
    if half_width is None:
        probe = np.repeat(x[None], spec.n0, axis=0)
        ks = np.arange(spec.n0)
        sig = float(np.max(np.linalg.norm(spec.sig(probe, ks), axis=(1, 2), ord=2)))
        b = float(np.max(np.linalg.norm(spec.b(probe, ks), axis=1)))
        half_width = 6.0 * sig / math.sqrt(alpha) + b / alpha
        half_width = max(half_width, 1e-3)
    if nodes is None:
        nodes = 41 if spec.d == 1 else 11
    return Mesh(tuple(np.linspace(x[i] - half_width, x[i] + half_width, nodes) for i in range(spec.d)))


class _Occupation(Observer):
    """Per-lane discounted killed occupation of mesh cells plus the direct ``f`` integral.

    Trapezoid rule: each evaluation point carries half of the substep before
    it and half of the one after it, so it is scattered once, when the
    following substep (or an event) closes it.
    """

    def __init__(self, n, mesh: Mesh, alpha, f):
        self.mesh, self.alpha, self.f = mesh, alpha, f
        self.N = mesh.size
        self.occ = np.zeros((n, self.N))
        self.F = np.zeros(n)
        self._flat = self.occ.reshape(-1)

    def _eval(self, st, idx, s):
        disc = np.exp(-self.alpha * s - st.q_cum[idx])
        j, w = self.mesh.weights(st.x[idx])
        return idx[:, None] * self.N + j, disc[:, None] * w, disc * self.f(st.x[idx], st.k[idx])

    def _flush(self, idx, wt):
        # rows differ per lane and nodes differ within a row, so no index repeats
        self._flat[self.pos[idx]] += wt[:, None] * self.val[idx]
        self.F[idx] += wt * self.fv[idx]

    def start(self, st):
        self.pos, self.val, self.fv = self._eval(st, np.arange(st.n), st.s)
        self.pend = np.zeros(st.n)

    def substep(self, st, idx, s0, s1, x0):
        half = 0.5 * (s1 - s0)
        self._flush(idx, self.pend[idx] + half)
        self.pos[idx], self.val[idx], self.fv[idx] = self._eval(st, idx, s1)
        self.pend[idx] = half

    def after_event(self, st, idx, t):
        self._flush(idx, self.pend[idx])
        self.pos[idx], self.val[idx], self.fv[idx] = self._eval(st, idx, st.s[idx])
        self.pend[idx] = 0.0

    def result(self):
        self._flush(np.arange(self.pend.size), self.pend)
        self.pend[:] = 0.0
        return {"occ": self.occ, "F": self.F}


@dataclass
class ResolventSeriesResult:
    estimate: MCEstimate
    terms: np.ndarray  # psi_i(x, k), i = 0..m_max
    term_se: np.ndarray
    term_norms: np.ndarray  # sum_k max_mesh |psi_i^(k)|
    term_norm_se: np.ndarray
    residual_bound: float
    mesh: Mesh
    psi: np.ndarray = field(repr=False)  # (m_max + 1, n0, mesh size)
    psi_se: np.ndarray = field(repr=False)
    runtime_ms: float = 0.0


def resolvent_series(
    spec: ModelSpec,
    f: Callable,
    alpha: float,
    x,
    k: int,
    m_max: int,
    inner_mc_budget: int,
    seed,
    h: float = 1e-3,
    f_sup: float = 1.0,
    tail_tol: float | None = None,
    mesh: Mesh | None = None,
    workers: int = 1,
) -> ResolventSeriesResult:
    """Series ``sum_i psi_i`` with ``psi_i^{(k)} = G^{(k)}(sum_{l != k} q_kl psi_{i-1}^{(l)})``.

    One ensemble of ``inner_mc_budget`` killed paths is run from every mesh
    node and from ``x``, in every regime; each path records its discounted
    killed occupation of the mesh, so all nested resolvents reduce to
    matrix-vector products with the mean occupation matrices.
    """
    t0 = time.perf_counter()
    a1 = alpha_one(spec)
    if alpha < a1 * (1 - 1e-12):
        raise ValueError(f"alpha = {alpha} is below alpha_one = {a1}")
    if m_max < 0:
        raise ValueError("m_max must be >= 0")
    if inner_mc_budget < 2:
        raise ValueError("inner_mc_budget must be >= 2")
    mesh = mesh or default_mesh(spec, x, alpha)
    if mesh.d != spec.d or mesh.d > 2:
        raise ModelError("mesh-based series support d <= 2 matching the model")
    n0, N, n = spec.n0, mesh.size, int(inner_mc_budget)
    x = np.asarray(x, dtype=float).reshape(spec.d)
    starts = np.vstack([mesh.nodes, x[None]])  # last start is x itself
    S = starts.shape[0]
    t_max, tail = horizon(alpha, f_sup, SERIES_TAIL * f_sup / alpha if tail_tol is None else tail_tol)

    O = np.zeros((n0, S, N))  # mean occupation
    C = np.zeros((n0, S, N, N))  # occupation covariance
    F = np.zeros((n0, S))
    Fv = np.zeros((n0, S))
    F_occ_cov = np.zeros((n0, S, N))
    x_lanes = {}
    for kk in range(n0):
        X0 = np.repeat(starts, n, axis=0)
        res = run_ensemble(
            spec,
            X0,
            kk,
            t_max,
            h,
            S * n,
            subseed(seed, kk),
            switching="none",
            killing="weight",
            observers=lambda a, b: [_Occupation(b - a, mesh, alpha, f)],
            workers=workers,
        )
        occ = res.obs["occ"].reshape(S, n, N)
        Fp = res.obs["F"].reshape(S, n)
        O[kk] = occ.mean(axis=1)
        F[kk] = Fp.mean(axis=1)
        Fv[kk] = Fp.var(axis=1, ddof=1)
        dev = occ - O[kk][:, None, :]
        C[kk] = np.einsum("spi,spj->sij", dev, dev) / (n - 1)
        F_occ_cov[kk] = np.einsum("sp,spi->si", Fp - F[kk][:, None], dev) / (n - 1)
        x_lanes[kk] = (occ[-1], Fp[-1])

    Qm = spec.Q(mesh.nodes)  # (N, n0, n0)
    m = m_max
    psi = np.zeros((m + 1, n0, S))  # values at mesh nodes and at x
    pse = np.zeros((m + 1, n0, S))
    psi[0] = F
    pse[0] = np.sqrt(Fv / n)
    phis = []
    for i in range(1, m + 1):
        phi = np.zeros((n0, N))
        dphi = np.zeros((n0, N))
        for kk in range(n0):
            for l in range(n0):
                if l != kk:
                    phi[kk] += Qm[:, kk, l] * psi[i - 1, l, :N]
                    dphi[kk] += np.abs(Qm[:, kk, l]) * pse[i - 1, l, :N]
        phis.append(phi)
        for kk in range(n0):
            psi[i, kk] = O[kk] @ phi[kk]
            mc = np.einsum("i,sij,j->s", phi[kk], C[kk], phi[kk]) / n
            prop = O[kk] @ dphi[kk]
            pse[i, kk] = np.sqrt(np.maximum(mc, 0.0)) + prop

    terms = psi[:, k, -1]
    term_se = pse[:, k, -1]
    # total at (x, k): per-path sum of all levels, plus propagated mesh error
    occ_x, F_x = x_lanes[k]
    Phi = sum(phis) if phis else np.zeros((n0, N))
    per_path = F_x + occ_x @ Phi[k]
    dPhi = sum(
        (np.abs(Qm[:, k, l])[None, :] * pse[i - 1, l, :N]).sum(axis=0)
        for i in range(1, m + 1)
        for l in range(n0)
        if l != k
    ) if m > 0 else np.zeros(N)
    est = MCEstimate(
        float(per_path.mean()),
        float(per_path.std(ddof=1) / math.sqrt(n) + O[k, -1] @ np.broadcast_to(dPhi, (N,))),
        n,
        seed=seed if isinstance(seed, int) else None,
        bias_bound=tail,
    )
    mesh_abs = np.abs(psi[:, :, :N])
    arg = mesh_abs.argmax(axis=2)
    norms = mesh_abs.max(axis=2).sum(axis=1)
    norm_se = np.sqrt((np.take_along_axis(pse[:, :, :N], arg[:, :, None], axis=2)[:, :, 0] ** 2).sum(axis=1))
    G_mesh = np.abs(psi[:, :, :N].sum(axis=0)).max(axis=1).sum()
    residual = float(G_mesh / 2**m)
    return ResolventSeriesResult(
        est, terms, term_se, norms, norm_se, residual, mesh, psi[:, :, :N], pse[:, :, :N],
        runtime_ms=1e3 * (time.perf_counter() - t0),
    )


# ----------------------------------------------------------------------------
# transition series


def regime_sequences(n0: int, k: int, l: int, m: int) -> list[tuple[int, ...]]:
    """Sequences ``(k, l_1, ..., l_m = l)`` with consecutive entries different."""
    if m == 0:
        return [(k,)] if k == l else []
    out = []
    for mid in product(range(n0), repeat=m - 1):
        seq = (k, *mid, l)
        if all(a != b for a, b in zip(seq, seq[1:])):
            out.append(seq)
    return out


def poisson_tail(mean: float, m_max: int) -> float:
    """``P{N > m_max}`` for ``N ~ Poisson(mean)``."""
    return float(stats.poisson.sf(m_max, mean))


@dataclass
class TransitionSeriesResult:
    estimate: MCEstimate
    terms: list[MCEstimate]


def transition_series_mc(
    spec: ModelSpec,
    x,
    k: int,
    box,
    l: int,
    t: float,
    m_max: int,
    n_outer: int,
    seed,
    h: float = 1e-3,
    workers: int = 1,
) -> TransitionSeriesResult:
    """Truncated series for ``P(t, (x, k), A x {l})`` with ``A = box``.

    Term ``m`` samples ordered switch times uniformly on the simplex (weight
    ``t^m / m!``), runs killed segments between them and multiplies by
    ``q_{l_{i-1} l_i}(X(t_i))`` along each admissible regime sequence.
    """
    if m_max not in (0, 1, 2):
        raise ValueError("m_max must be 0, 1 or 2 (higher orders are not supported)")
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (spec.d,)) for v in box)

    def indicator(y):
        return np.all((y >= lo) & (y <= hi), axis=1).astype(float)

    terms = []
    for m in range(m_max + 1):
        seqs = regime_sequences(spec.n0, k, l, m)
        value, var_sum = 0.0, 0.0
        n_used = n_outer
        for j, seq in enumerate(seqs):
            sd = subseed(seed, m, j)

            def schedule(a, b, streams, seq=seq, m=m):
                u = np.sort(streams.aux.random((b - a, m)) * t, axis=1)
                targets = np.broadcast_to(np.asarray(seq[1:], dtype=np.int64), (b - a, m)).copy()
                return u, targets

            res = run_ensemble(
                spec, x, k, t, h, n_outer, sd, switching="scheduled", killing="weight",
                schedule=schedule if m > 0 else None, workers=workers,
            ) if m > 0 else run_ensemble(
                spec, x, k, t, h, n_outer, sd, switching="none", killing="weight", workers=workers,
            )
            with np.errstate(invalid="ignore"):
                w = np.exp(res.log_switch - res.q_cum) * indicator(res.x)
            w = np.nan_to_num(w) * (t**m / math.factorial(m))
            e = MCEstimate.from_samples(w)
            value += e.value
            var_sum += e.se**2
        terms.append(MCEstimate(value, math.sqrt(var_sum), n_used, seed=None))
    total = MCEstimate(sum(e.value for e in terms), math.sqrt(sum(e.se**2 for e in terms)), n_outer)
    return TransitionSeriesResult(total, terms)
