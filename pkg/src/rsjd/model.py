"""The weakly coupled Lévy-type operator and its ingredients.

All coefficient callables are vectorized over a batch of points:

* ``drift(x, k) -> (n, d)``
* ``sigma(x, k) -> (n, d, d)`` with ``a = sigma @ sigma.T``
* ``switching(x) -> (n, n0, n0)``

where ``x`` has shape ``(n, d)`` and ``k`` is an integer array of shape
``(n,)``.  Regimes are indexed ``0, ..., n0 - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

Array = np.ndarray

ROW_SUM_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model description."""


class QuadratureError(RuntimeError):
    """Monte Carlo jump integral whose variance does not settle."""


# ----------------------------------------------------------------------------
# moduli of continuity


@dataclass(frozen=True)
class Modulus:
    """A modulus ``r -> m(r)`` on ``[0, inf)``; ``kind`` selects closed forms."""

    kind: str
    params: dict
    fn: Callable[[Array], Array] = field(repr=False, compare=False)

    def __call__(self, r):
        return self.fn(np.asarray(r, dtype=float))


def linear_modulus(c: float = 1.0) -> Modulus:
    return Modulus("linear", {"c": c}, lambda r: c * r)


def log_modulus(c: float = 1.0, cutoff: float = math.exp(-1.0)) -> Modulus:
    """``c r log(1/r)`` below ``cutoff`` and constant above it.

    The constant extension keeps the modulus nondecreasing and concave; this
    needs ``cutoff <= 1/e``.
    """
    if not 0 < cutoff <= math.exp(-1.0) + 1e-15:
        raise ModelError("log modulus cutoff must lie in (0, 1/e]")
    top = c * cutoff * math.log(1.0 / cutoff)

    def fn(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = c * r * np.log(1.0 / r)
        out = np.where(r < cutoff, inner, top)
        return np.where(r > 0, out, 0.0)

    return Modulus("log", {"c": c, "cutoff": cutoff}, fn)


def power_modulus(c: float = 1.0, p: float = 1.0) -> Modulus:
    return Modulus("power", {"c": c, "p": p}, lambda r: c * np.power(r, p))


def zero_modulus() -> Modulus:
    return Modulus("zero", {}, lambda r: np.zeros_like(r))


def constant_modulus(c: float) -> Modulus:
    return Modulus("constant", {"c": c}, lambda r: np.full_like(r, c))


def modulus_from_config(cfg: dict | None) -> Modulus | None:
    if cfg is None:
        return None
    kind = cfg["kind"]
    params = cfg.get("params", {})
    builders = {
        "linear": linear_modulus,
        "log": log_modulus,
        "power": power_modulus,
        "zero": zero_modulus,
        "constant": constant_modulus,
    }
    if kind not in builders:
        raise ModelError(f"unknown modulus kind {kind!r}")
    return builders[kind](**params)


# ----------------------------------------------------------------------------
# jump laws and kernels


class JumpLaw:
    """Probability law of a dominating jump, one per regime."""

    d: int

    def sample(self, rng: np.random.Generator, k: Array) -> Array:
        raise NotImplementedError

    def truncated_mean(self, eps: float) -> Array:
        """``E[U 1{|U| < eps}]`` per regime, shape ``(n0, d)``."""
        raise NotImplementedError

    def charfn(self, theta: Array) -> Array:
        """``E exp(i <theta, U>)`` per regime, shape ``(n0,)``."""
        raise NotImplementedError

    def outside_prob(self, eps: float) -> Array:
        """``P{|U| >= eps}`` per regime, shape ``(n0,)``."""
        raise NotImplementedError


@dataclass(frozen=True)
class PointLaw(JumpLaw):
    atoms: Array  # (n0, d)

    def __post_init__(self):
        object.__setattr__(self, "atoms", np.atleast_2d(np.asarray(self.atoms, dtype=float)))

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def sample(self, rng, k):
        return self.atoms[k].copy()

    def truncated_mean(self, eps):
        inside = np.linalg.norm(self.atoms, axis=1) < eps
        return self.atoms * inside[:, None]

    def charfn(self, theta):
        return np.exp(1j * self.atoms @ np.asarray(theta, dtype=float).reshape(self.d))

    def outside_prob(self, eps):
        return (np.linalg.norm(self.atoms, axis=1) >= eps).astype(float)


@dataclass(frozen=True)
class NormalLaw(JumpLaw):
    """Isotropic normal jumps ``N(mean_k, std_k^2 I)``."""

    mean: Array  # (n0, d)
    std: Array  # (n0,)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_2d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "std", np.atleast_1d(np.asarray(self.std, dtype=float)))

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    def sample(self, rng, k):
        z = rng.standard_normal((k.shape[0], self.d))
        return self.mean[k] + self.std[k][:, None] * z

    def truncated_mean(self, eps):
        if self.d == 1:
            m = self.mean[:, 0]
            s = self.std
            lo, hi = (-eps - m) / s, (eps - m) / s
            val = m * (stats.norm.cdf(hi) - stats.norm.cdf(lo)) - s * (
                stats.norm.pdf(hi) - stats.norm.pdf(lo)
            )
            return val[:, None]
        # no closed form for the ball in d > 1; fixed large quadrature sample
        rng = np.random.default_rng(20240917)
        out = np.empty_like(self.mean)
        for j in range(self.mean.shape[0]):
            u = self.mean[j] + self.std[j] * rng.standard_normal((1 << 20, self.d))
            out[j] = (u * (np.linalg.norm(u, axis=1) < eps)[:, None]).mean(axis=0)
        return out

    def charfn(self, theta):
        th = np.asarray(theta, dtype=float).reshape(self.d)
        return np.exp(1j * self.mean @ th - 0.5 * self.std**2 * (th @ th))

    def outside_prob(self, eps):
        # |U|^2 / std^2 is noncentral chi-square with d degrees of freedom
        nc = np.sum(self.mean**2, axis=1) / self.std**2
        return stats.ncx2.sf((eps / self.std) ** 2, self.d, nc)


@dataclass(frozen=True)
class SmallJumps:
    """The part of the kernel inside ``B(0, delta)`` that is not simulated.

    Its compensated contribution has mean zero; ``second_moment`` bounds its
    variance rate.  With ``gaussian`` set, the simulator replaces it by an
    isotropic Gaussian increment of matching covariance.
    """

    delta: float
    second_moment: float | Callable[[Array, Array], Array]
    gaussian: bool = False

    def m2(self, x: Array, k: Array) -> Array:
        if callable(self.second_moment):
            return np.asarray(self.second_moment(x, k), dtype=float)
        return np.full(x.shape[0], float(self.second_moment))


@dataclass(frozen=True)
class LevyKernelSpec:
    """Thinning-ready Lévy kernel ``nu(x, k, du) = accept(x, k, u) * mass_k * law_k(du)``.

    ``mass`` holds the total masses of the dominating finite measures, one
    per regime.  ``compensator(x, k, eps0)`` returns
    ``int_{|u| < eps0} u nu(x, k, du)``; when omitted it is computed by a
    fixed quadrature sample of the dominating law.  The optional
    ``exponent(x, k, theta, eps0)`` and ``tail(x, k, eps)`` give the jump part
    of the Lévy exponent and ``nu(x, k, {|u| >= eps})`` in closed form, with
    the same quadrature fallback.
    """

    mass: Array
    law: JumpLaw | None
    accept: Callable[[Array, Array, Array], Array]
    total_bound: float
    compensator: Callable[[Array, Array, float], Array] | None = None
    small: SmallJumps | None = None
    shared: bool = True
    quad_size: int = 512
    exponent: Callable | None = None
    tail: Callable | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mass", np.atleast_1d(np.asarray(self.mass, dtype=float)))
        if np.any(self.mass < 0) or not np.all(np.isfinite(self.mass)):
            raise ModelError("dominating jump masses must be finite and nonnegative")
        if not (self.total_bound >= 0 and math.isfinite(self.total_bound)):
            raise ModelError("kernel total_bound must be finite")
        if np.any(self.mass > 0) and self.law is None:
            raise ModelError("a kernel with positive mass needs a jump law")

    @property
    def active(self) -> bool:
        return bool(np.any(self.mass > 0))

    def sample(self, rng, k):
        return self.law.sample(rng, k)

    def _quad_nodes(self, n0: int):
        if "nodes" not in self._cache:
            rng = np.random.default_rng(917_2024)
            self._cache["nodes"] = [
                self.law.sample(rng, np.full(self.quad_size, j)) for j in range(n0)
            ]
        return self._cache["nodes"]

    def compensator_at(self, x: Array, k: Array, eps0: float) -> Array:
        if not self.active:
            return np.zeros_like(x)
        if self.compensator is not None:
            return np.asarray(self.compensator(x, k, eps0), dtype=float)
        out = np.zeros_like(x)
        nodes = self._quad_nodes(self.mass.shape[0])
        for j in np.unique(k):
            sel = np.nonzero(k == j)[0]
            u = nodes[j]
            inside = (np.linalg.norm(u, axis=1) < eps0)[None, :, None]
            xr = np.repeat(x[sel], u.shape[0], axis=0)
            ur = np.tile(u, (sel.size, 1))
            r = self.accept(xr, np.full(xr.shape[0], j), ur).reshape(sel.size, u.shape[0])
            out[sel] = self.mass[j] * (r[:, :, None] * u[None] * inside).mean(axis=1)
        return out

    def _node_average(self, x, k, fn):
        # mass_k * mean over fixed nodes of accept(x, k, u) * fn(u), per point
        out = np.zeros(x.shape[0], dtype=complex)
        nodes = self._quad_nodes(self.mass.shape[0])
        for j in np.unique(k):
            sel = np.nonzero(k == j)[0]
            u = nodes[j]
            xr = np.repeat(x[sel], u.shape[0], axis=0)
            ur = np.tile(u, (sel.size, 1))
            r = self.accept(xr, np.full(xr.shape[0], j), ur).reshape(sel.size, u.shape[0])
            out[sel] = self.mass[j] * (r * fn(u)[None, :]).mean(axis=1)
        return out

    def exponent_at(self, x: Array, k: Array, theta, eps0: float) -> Array:
        """``int (e^{i<theta,u>} - 1 - i<theta,u> 1{|u| < eps0}) nu(x, k, du)``."""
        if not self.active:
            return np.zeros(x.shape[0], dtype=complex)
        if self.exponent is not None:
            return np.asarray(self.exponent(x, k, theta, eps0), dtype=complex)
        th = np.asarray(theta, dtype=float).reshape(-1)

        def fn(u):
            tu = u @ th
            return np.exp(1j * tu) - 1.0 - 1j * tu * (np.linalg.norm(u, axis=1) < eps0)

        return self._node_average(x, k, fn)

    def tail_at(self, x: Array, k: Array, eps: float) -> Array:
        """``nu(x, k, {|u| >= eps})``."""
        if not self.active:
            return np.zeros(x.shape[0])
        if self.tail is not None:
            return np.asarray(self.tail(x, k, eps), dtype=float)
        return self._node_average(x, k, lambda u: (np.linalg.norm(u, axis=1) >= eps).astype(float)).real


def no_jumps(n0: int) -> LevyKernelSpec:
    return LevyKernelSpec(np.zeros(n0), None, lambda x, k, u: np.zeros(x.shape[0]), 0.0)


def compound_poisson(
    rate: Sequence[float],
    law: JumpLaw,
    modulation: Callable[[Array, Array], Array] | None = None,
    small: SmallJumps | None = None,
) -> LevyKernelSpec:
    """Compound Poisson kernel ``modulation(x, k) * rate_k * law_k``.

    ``modulation`` takes values in ``[0, 1]``; ``None`` means state
    independent.  The compensator is exact whenever the law's truncated mean
    is.
    """
    rate = np.atleast_1d(np.asarray(rate, dtype=float))

    if modulation is None:

        def accept(x, k, u):
            return np.ones(x.shape[0])

    else:

        def accept(x, k, u):
            return np.asarray(modulation(x, k), dtype=float)

    tmeans: dict[float, Array] = {}

    def compensator(x, k, eps0):
        if eps0 not in tmeans:
            tmeans[eps0] = law.truncated_mean(eps0)
        base = rate[k][:, None] * tmeans[eps0][k]
        if modulation is None:
            return base
        return np.asarray(modulation(x, k))[:, None] * base

    def scale(x, k):
        return np.ones(x.shape[0]) if modulation is None else np.asarray(modulation(x, k), dtype=float)

    def exponent(x, k, theta, eps0):
        th = np.asarray(theta, dtype=float).reshape(law.d)
        if eps0 not in tmeans:
            tmeans[eps0] = law.truncated_mean(eps0)
        per = rate * (law.charfn(th) - 1.0 - 1j * (tmeans[eps0] @ th))
        return scale(x, k) * per[k]

    def tail(x, k, eps):
        return scale(x, k) * (rate * law.outside_prob(eps))[k]

    # int (1 ^ |u|^2) nu <= rate * E[1 ^ |U|^2] <= rate
    return LevyKernelSpec(
        rate,
        law,
        accept,
        float(rate.max(initial=0.0)),
        compensator=compensator,
        small=small,
        exponent=exponent,
        tail=tail,
    )


# ----------------------------------------------------------------------------
# the model


@dataclass(frozen=True)
class ModelSpec:
    """Full description of a weakly coupled Lévy-type operator."""

    d: int
    n0: int
    drift: Callable[[Array, Array], Array]
    sigma: Callable[[Array, Array], Array]
    switching: Callable[[Array], Array]
    kernel: LevyKernelSpec
    qbar: float
    H: float = 1.0
    eps0: float = 1.0
    rho: Modulus = field(default_factory=linear_modulus)
    lambda0: float = 0.0
    theta_mod: Modulus | None = None
    delta0: float = 1.0
    name: str = "model"
    # optional fast path: (x, k) -> q_kk(x); must agree with switching
    switching_diag: Callable[[Array, Array], Array] | None = None

    def __post_init__(self):
        if int(self.d) < 1:
            raise ModelError("state dimension d must be a positive integer")
        if int(self.n0) < 1:
            raise ModelError("regime count n0 must be a positive integer")
        if not self.qbar > 0:
            raise ModelError("dominating switching rate qbar must be positive")
        if not self.eps0 > 0:
            raise ModelError("compensation radius eps0 must be positive")
        if not self.H > 0:
            raise ModelError("constant H must be positive")
        if self.lambda0 < 0:
            raise ModelError("ellipticity floor lambda0 must be nonnegative")
        if self.kernel.mass.shape[0] != self.n0:
            raise ModelError("kernel needs one dominating mass per regime")

    # batch helpers -----------------------------------------------------------
    def b(self, x: Array, k: Array) -> Array:
        return np.asarray(self.drift(x, k), dtype=float).reshape(x.shape)

    def sig(self, x: Array, k: Array) -> Array:
        return np.asarray(self.sigma(x, k), dtype=float).reshape(x.shape[0], self.d, self.d)

    def a(self, x: Array, k: Array) -> Array:
        s = self.sig(x, k)
        return s @ np.swapaxes(s, 1, 2)

    def Q(self, x: Array) -> Array:
        return np.asarray(self.switching(x), dtype=float).reshape(x.shape[0], self.n0, self.n0)

    def qdiag(self, x: Array, k: Array) -> Array:
        if self.switching_diag is not None:
            return np.asarray(self.switching_diag(x, k), dtype=float).reshape(x.shape[0])
        return self.Q(x)[np.arange(x.shape[0]), k, k]

    def with_changes(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)


def _points(spec: ModelSpec, x, k):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x.reshape(-1, spec.d)
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), (x.shape[0],)).copy()
    if np.any((k < 0) | (k >= spec.n0)):
        raise ModelError(f"regime index out of range 0..{spec.n0 - 1}")
    return x, k, single


# ----------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A twice differentiable ``f(x, k)`` with analytic derivatives."""

    value: Callable[[Array, Array], Array]
    grad: Callable[[Array, Array], Array]
    hess: Callable[[Array, Array], Array]
    support_radius: float = math.inf
    name: str = "f"
    # optional one-pass evaluation: (x, k, n0) -> (value, grad, hess, values in every regime (n, n0))
    jet_fn: Callable | None = None

    __test__ = False  # not a pytest class

    def __call__(self, x, k):
        return self.value(x, k)

    def jet(self, x, k, n0: int):
        if self.jet_fn is not None:
            return self.jet_fn(x, k, n0)
        n = x.shape[0]
        per = np.stack([self.value(x, np.full(n, l)) for l in range(n0)], axis=1)
        return self.value(x, k), self.grad(x, k), self.hess(x, k), per


def constant_function(c: float) -> TestFunction:
    return TestFunction(
        lambda x, k: np.full(x.shape[0], float(c)),
        lambda x, k: np.zeros_like(x),
        lambda x, k: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
        name=f"const({c})",
    )


def regime_function(g: Sequence[float]) -> TestFunction:
    g = np.asarray(g, dtype=float)
    return TestFunction(
        lambda x, k: g[k],
        lambda x, k: np.zeros_like(x),
        lambda x, k: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
        name="regime",
    )


def quadratic_function() -> TestFunction:
    """``|x|^2``; not bounded, used for sanity checks of the diffusion part."""
    return TestFunction(
        lambda x, k: np.sum(x * x, axis=1),
        lambda x, k: 2.0 * x,
        lambda x, k: np.broadcast_to(2.0 * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy(),
        name="quadratic",
    )


def bump(center, radius: float, amplitude=1.0) -> TestFunction:
    """Smooth bump ``A_k exp(1 - 1/(1 - |x - c|^2 / R^2))`` supported in ``B(c, R)``.

    ``amplitude`` may be a scalar or one value per regime.
    """
    c = np.atleast_1d(np.asarray(center, dtype=float))
    amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
    R2 = float(radius) ** 2

    def core(x):
        y = x - c
        s = np.sum(y * y, axis=1) / R2
        inside = s < 1.0
        w = np.where(inside, 1.0 - s, 1.0)
        psi = np.where(inside, np.exp(1.0 - 1.0 / w), 0.0)
        return y, w, psi

    def scale(k):
        return amp[k] if amp.size > 1 else np.full(k.shape[0], amp[0])

    def derivs(y, w, v):
        dpsi = -v / w**2  # d/ds
        d2psi = v * (1.0 / w**4 - 2.0 / w**3)
        gs = 2.0 * y / R2
        g = dpsi[:, None] * gs
        H = d2psi[:, None, None] * gs[:, :, None] * gs[:, None, :] + (dpsi * 2.0 / R2)[:, None, None] * np.eye(y.shape[1])
        return g, H

    def value(x, k):
        return core(x)[2] * scale(k)

    def grad(x, k):
        y, w, psi = core(x)
        return derivs(y, w, psi * scale(k))[0]

    def hess(x, k):
        y, w, psi = core(x)
        return derivs(y, w, psi * scale(k))[1]

    def jet(x, k, n0):
        y, w, psi = core(x)
        v = psi * scale(k)
        g, H = derivs(y, w, v)
        amps = np.broadcast_to(amp, (n0,)) if amp.size == 1 else amp[:n0]
        return v, g, H, psi[:, None] * amps[None, :]

    return TestFunction(
        value, grad, hess, support_radius=float(radius), name=f"bump({c.tolist()},{radius})", jet_fn=jet
    )


def combine(fs: Sequence[TestFunction], coefs: Sequence[float]) -> TestFunction:
    coefs = [float(c) for c in coefs]
    return TestFunction(
        lambda x, k: sum(c * f.value(x, k) for f, c in zip(fs, coefs)),
        lambda x, k: sum(c * f.grad(x, k) for f, c in zip(fs, coefs)),
        lambda x, k: sum(c * f.hess(x, k) for f, c in zip(fs, coefs)),
        support_radius=max(f.support_radius for f in fs),
        name="combination",
    )


# ----------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class InvariantResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    model: str
    results: tuple[InvariantResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> InvariantResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self) -> list[str]:
        return [r.name for r in self.results]


def _psd_sqrt(m: Array) -> tuple[Array, Array]:
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0.0, None))[:, None, :]) @ np.swapaxes(v, 1, 2), w


def validate_model(spec: ModelSpec, sample_count: int, box, seed: int = 0, tol: float = 1e-10) -> ValidationReport:
    """Check the standing assumptions on ``sample_count`` random points of ``box``.

    ``box`` is a pair ``(lower, upper)`` of corner vectors.  Each invariant is
    reported with its worst observed violation (``<= tol`` passes).  A row
    of ``Q(x)`` that does not sum to zero raises ``ModelError`` outright.
    The requirement that every single-regime operator have a unique
    martingale solution cannot be checked numerically and is assumed.
    """
    if sample_count < 1:
        raise ModelError("sample_count must be >= 1")
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (spec.d,)) for v in box)
    rng = np.random.default_rng(seed)
    n, d, n0 = sample_count, spec.d, spec.n0
    x = lo + (hi - lo) * rng.random((n, d))
    z = lo + (hi - lo) * rng.random((n, d))
    out: list[InvariantResult] = []

    Qx, Qz = spec.Q(x), spec.Q(z)
    rows = np.abs(Qx.sum(axis=2))
    worst_row = float(rows.max())
    if worst_row > ROW_SUM_TOL:
        i, kk = np.unravel_index(np.argmax(rows), rows.shape)
        raise ModelError(
            f"row {kk} of Q(x) sums to {Qx[i, kk].sum():.3g} at x={x[i].tolist()} (tolerance {ROW_SUM_TOL})"
        )
    out.append(InvariantResult("q_row_sums", True, worst_row))

    off = ~np.eye(n0, dtype=bool)
    neg = float(np.max(-Qx[:, off], initial=0.0))
    out.append(InvariantResult("q_offdiag_nonnegative", neg <= tol, neg))

    diag = np.abs(np.diagonal(Qx, axis1=1, axis2=2))
    over = float(diag.max() - spec.qbar)
    out.append(InvariantResult("q_diag_bounded_by_qbar", over <= tol, max(over, 0.0)))
    if spec.switching_diag is not None:
        fast = np.stack([spec.qdiag(x, np.full(n, j)) for j in range(n0)], axis=1)
        gap = float(np.max(np.abs(fast - np.diagonal(Qx, axis1=1, axis2=2))))
        out.append(InvariantResult("q_diag_fast_path", gap <= tol, gap))

    r = np.linalg.norm(x - z, axis=1)
    lip = float(np.max(np.abs(Qx - Qz)[:, off] - spec.H * r[:, None], initial=-np.inf)) if n0 > 1 else 0.0
    out.append(InvariantResult("q_lipschitz", lip <= tol, max(lip, 0.0)))

    ks = rng.integers(0, n0, n)
    sx, sz = spec.sig(x, ks), spec.sig(z, ks)
    bx, bz = spec.b(x, ks), spec.b(z, ks)
    lhs = np.sum((sx - sz) ** 2, axis=(1, 2)) + 2.0 * np.sum((x - z) * (bx - bz), axis=1)
    fp1 = float(np.max(lhs - spec.H * r * spec.rho(r)))
    out.append(InvariantResult("drift_diffusion_modulus", fp1 <= tol, max(fp1, 0.0)))

    ker = spec.kernel
    if ker.active:
        m = 256
        kr = np.repeat(ks, m)
        u = ker.sample(rng, kr)
        rx = ker.accept(np.repeat(x, m, axis=0), kr, u)
        rz = ker.accept(np.repeat(z, m, axis=0), kr, u)
        bad = float(max(np.max(rx - 1.0), np.max(-rx), np.max(rz - 1.0), np.max(-rz)))
        out.append(InvariantResult("acceptance_in_unit_interval", bad <= tol, max(bad, 0.0)))
        tv = (ker.mass[kr] * np.linalg.norm(u, axis=1) * np.abs(rx - rz)).reshape(n, m).mean(axis=1)
        fp2 = float(np.max(tv - spec.H * spec.rho(r)))
        out.append(
            InvariantResult("kernel_modulus", fp2 <= tol, max(fp2, 0.0), "Monte Carlo estimate, 256 draws per pair")
        )
    out.append(
        InvariantResult(
            "kernel_finite",
            bool(math.isfinite(ker.total_bound) and np.all(np.isfinite(ker.mass))),
            0.0,
        )
    )

    if spec.lambda0 > 0:
        ax = sx @ np.swapaxes(sx, 1, 2)
        emin = np.linalg.eigvalsh(ax)[:, 0]
        ell = float(np.max(spec.lambda0 - emin))
        out.append(InvariantResult("uniform_ellipticity", ell <= tol, max(ell, 0.0)))
        if spec.theta_mod is not None:
            # pairs within delta0 of each other
            dirs = rng.standard_normal((n, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            zz = x + dirs * (spec.delta0 * rng.random(n))[:, None]
            rr = np.linalg.norm(x - zz, axis=1)
            eye = np.eye(d)
            slx, _ = _psd_sqrt(spec.a(x, ks) - spec.lambda0 * eye)
            slz, _ = _psd_sqrt(spec.a(zz, ks) - spec.lambda0 * eye)
            lhs2 = 2.0 * np.sum((x - zz) * (spec.b(x, ks) - spec.b(zz, ks)), axis=1) + np.sum(
                (slx - slz) ** 2, axis=(1, 2)
            )
            sf = float(np.max(lhs2 - 2.0 * spec.H * rr * spec.theta_mod(rr)))
            out.append(InvariantResult("reduced_diffusion_modulus", sf <= tol, max(sf, 0.0)))
    return ValidationReport(spec.name, tuple(out))


# ----------------------------------------------------------------------------
# generator and Lévy exponent


@dataclass(frozen=True)
class QuadratureConfig:
    """Monte Carlo budget for jump integrals (draws per evaluation point)."""

    n: int = 4096
    guard: bool = True


def _variance_guard(integrand: Array) -> None:
    # integrand: (npts, N); second moment over the first half vs all draws
    N = integrand.shape[1]
    if N < 1000:
        return
    sq = np.abs(integrand) ** 2
    full = sq.mean(axis=1)
    half = sq[:, : N // 2].mean(axis=1)
    scale = np.maximum(full, half)
    ok = scale <= 1e-300
    ratio = np.where(ok, 1.0, np.minimum(full, half) / np.where(ok, 1.0, scale))
    if np.any(ratio < 0.5):
        raise QuadratureError(
            "jump-integral second moment changes by more than a factor 2 when the "
            "sample doubles; the integrand variance looks infinite"
        )


def _jump_draws(spec: ModelSpec, x: Array, k: Array, N: int, rng):
    npts = x.shape[0]
    kr = np.repeat(k, N)
    u = spec.kernel.sample(rng, kr)
    r = spec.kernel.accept(np.repeat(x, N, axis=0), kr, u)
    return u.reshape(npts, N, spec.d), (spec.kernel.mass[kr] * r).reshape(npts, N)


def generator_apply(spec: ModelSpec, f: TestFunction, x, k, quad: QuadratureConfig | None = None, seed=0):
    """Apply the operator to ``f`` at ``(x, k)``.

    Returns ``(value, se)`` where ``se`` is the Monte Carlo standard error of
    the jump integral (the only estimated term).  Accepts a single point of
    shape ``(d,)`` or a batch ``(n, d)``.
    """
    quad = quad or QuadratureConfig()
    x, k, single = _points(spec, x, k)
    n = x.shape[0]
    g = f.grad(x, k)
    Hf = f.hess(x, k)
    val = 0.5 * np.einsum("nij,nji->n", spec.a(x, k), Hf) + np.sum(spec.b(x, k) * g, axis=1)

    Q = spec.Q(x)
    fk = f.value(x, k)
    for l in range(spec.n0):
        val = val + Q[np.arange(n), k, l] * (f.value(x, np.full(n, l)) - fk)

    se = np.zeros(n)
    ker = spec.kernel
    if ker.active:
        rng = np.random.default_rng(seed)
        N = quad.n
        u, w = _jump_draws(spec, x, k, N, rng)
        xu = (x[:, None, :] + u).reshape(-1, spec.d)
        kr = np.repeat(k, N)
        inside = np.linalg.norm(u, axis=2) < spec.eps0
        integrand = w * (
            f.value(xu, kr).reshape(n, N) - fk[:, None] - np.einsum("nd,nmd->nm", g, u) * inside
        )
        if quad.guard:
            _variance_guard(integrand)
        val = val + integrand.mean(axis=1)
        se = integrand.std(axis=1, ddof=1) / math.sqrt(N)
        if ker.small is not None:
            val = val + 0.5 * ker.small.m2(x, k) / spec.d * np.trace(Hf, axis1=1, axis2=2)
    if single:
        return float(val[0]), float(se[0])
    return val, se


def levy_exponent(spec: ModelSpec, theta, x, k, quad: QuadratureConfig | None = None, seed=0):
    """``psi(theta; x, k)`` with the jump integral estimated by Monte Carlo.

    Returns ``(value, se)``.  Using the same ``seed`` for ``theta`` and
    ``-theta`` gives exactly conjugate values when the coefficients are real.
    """
    quad = quad or QuadratureConfig()
    x, k, single = _points(spec, x, k)
    n = x.shape[0]
    th = np.broadcast_to(np.asarray(theta, dtype=float).reshape(-1, spec.d), (n, spec.d))
    val = 1j * np.sum(th * spec.b(x, k), axis=1) - 0.5 * np.einsum("ni,nij,nj->n", th, spec.a(x, k), th)
    se = np.zeros(n)
    ker = spec.kernel
    if ker.active:
        rng = np.random.default_rng(seed)
        N = quad.n
        u, w = _jump_draws(spec, x, k, N, rng)
        tu = np.einsum("nd,nmd->nm", th, u)
        inside = np.linalg.norm(u, axis=2) < spec.eps0
        integrand = w * (np.exp(1j * tu) - 1.0 - 1j * tu * inside)
        if quad.guard:
            _variance_guard(integrand)
        val = val + integrand.mean(axis=1)
        se = np.sqrt(integrand.real.var(axis=1, ddof=1) + integrand.imag.var(axis=1, ddof=1)) / math.sqrt(N)
        if ker.small is not None:
            val = val - 0.5 * ker.small.m2(x, k) / spec.d * np.sum(th * th, axis=1)
    if single:
        return complex(val[0]), float(se[0])
    return val, se
