"""Built-in models and the JSON model configuration format.

Regimes are numbered from 0 in every array-valued parameter.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .model import (
    ModelError,
    ModelSpec,
    NormalLaw,
    PointLaw,
    compound_poisson,
    linear_modulus,
    modulus_from_config,
    no_jumps,
    zero_modulus,
)


def _per_regime(v, n0, d, name):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = np.full((n0, d), float(a))
    elif a.ndim == 1 and n0 == 1 and a.shape[0] == d:
        a = a[None, :]
    elif a.ndim == 1 and a.shape[0] == n0:
        a = np.repeat(a[:, None], d, axis=1)
    if a.shape != (n0, d):
        raise ModelError(f"{name} needs shape ({n0}, {d}), got {a.shape}")
    return a


# ----------------------------------------------------------------------------
# coefficient builders


def constant_drift(b, n0: int, d: int):
    B = _per_regime(b, n0, d, "drift")
    return lambda x, k: B[k]


def ou_drift(theta, mu, n0: int, d: int):
    th = np.broadcast_to(np.asarray(theta, dtype=float), (n0,)).copy()
    M = _per_regime(mu, n0, d, "drift mean")
    return lambda x, k: -th[k][:, None] * (x - M[k])


def constant_sigma(s, n0: int, d: int):
    s = np.asarray(s, dtype=float)
    if s.ndim <= 1:
        sv = np.broadcast_to(s, (n0,)).copy()
        S = sv[:, None, None] * np.eye(d)[None]
    else:
        S = np.broadcast_to(s.reshape(-1, d, d), (n0, d, d)).copy()
    return lambda x, k: S[k]


def constant_switching(rates, n0: int):
    """Constant Q from a matrix of off-diagonal rates (the diagonal is ignored).

    Returns ``(Q, diag)`` callables.
    """
    R = np.asarray(rates, dtype=float).reshape(n0, n0).copy()
    np.fill_diagonal(R, 0.0)
    Q = R - np.diag(R.sum(axis=1))
    dq = np.diag(Q).copy()
    return (lambda x: np.broadcast_to(Q, (x.shape[0], n0, n0))), (lambda x, k: dq[k])


def hat_switching(n0: int):
    return constant_switching(np.ones((n0, n0)), n0)


def sinusoidal_switching(base, amp, phase, n0: int):
    """``q_kl(x) = base_kl + amp_kl sin(x_1 + phase_kl)`` for ``k != l``.

    Returns ``(Q, diag)`` callables.
    """
    B = np.asarray(base, dtype=float).reshape(n0, n0).copy()
    A = np.asarray(amp, dtype=float).reshape(n0, n0).copy()
    P = np.asarray(phase, dtype=float).reshape(n0, n0).copy()
    off = ~np.eye(n0, dtype=bool)
    B, A = B * off, A * off
    # sin(x + p) = sin x cos p + cos x sin p
    AC, AS = A * np.cos(P), A * np.sin(P)
    rB, rC, rS = B.sum(axis=1), AC.sum(axis=1), AS.sum(axis=1)
    ii = np.arange(n0)

    def Q(x):
        s = np.sin(x[:, 0])[:, None, None]
        c = np.cos(x[:, 0])[:, None, None]
        q = B + s * AC + c * AS
        q[:, ii, ii] = -q.sum(axis=2)
        return q

    def diag(x, k):
        return -(rB[k] + np.sin(x[:, 0]) * rC[k] + np.cos(x[:, 0]) * rS[k])

    return Q, diag


def _switching(pair) -> dict:
    Q, diag = pair
    return {"switching": Q, "switching_diag": diag}


def cosine_modulation(base: float, amp: float):
    if base - abs(amp) < 0 or base + abs(amp) > 1:
        raise ModelError("cosine modulation must stay within [0, 1]")
    return lambda x, k: base + amp * np.cos(x[:, 0])


# ----------------------------------------------------------------------------
# named models


def constant_coefficient(
    d=1, n0=1, b=0.0, sigma=1.0, jump_rate=0.0, jump_law=None, rates=None, eps0=1.0, H=1.0, qbar=None, name="constant"
) -> ModelSpec:
    """Constant drift, diffusion, jump kernel and switching rates."""
    rates = np.zeros((n0, n0)) if rates is None else rates
    Qf, Qd = constant_switching(rates, n0)
    qmax = float(np.max(-np.diagonal(Qf(np.zeros((1, d)))[0])))
    if np.any(np.asarray(jump_rate) > 0):
        kernel = compound_poisson(np.broadcast_to(np.asarray(jump_rate, dtype=float), (n0,)), jump_law)
    else:
        kernel = no_jumps(n0)
    s = np.asarray(sigma, dtype=float)
    lam0 = float(np.min(s) ** 2) if s.ndim <= 1 else float(np.min(np.linalg.eigvalsh(s @ np.swapaxes(s, -1, -2))))
    return ModelSpec(
        d=d,
        n0=n0,
        drift=constant_drift(b, n0, d),
        sigma=constant_sigma(sigma, n0, d),
        switching=Qf,
        switching_diag=Qd,
        kernel=kernel,
        qbar=qbar if qbar is not None else max(qmax, 1.0),
        H=max(H, qmax) if n0 > 1 else H,
        eps0=eps0,
        rho=linear_modulus(),
        lambda0=max(lam0, 0.0),
        theta_mod=zero_modulus(),
        name=name,
    )


def brownian(d=1, sigma=1.0) -> ModelSpec:
    return constant_coefficient(d=d, sigma=sigma, name="brownian")


def linear_drift(rate=1.0, sigma=1.0) -> ModelSpec:
    """``dX = -rate X dt + sigma dW`` in one dimension."""
    return ModelSpec(
        d=1,
        n0=1,
        drift=ou_drift(rate, 0.0, 1, 1),
        sigma=constant_sigma(sigma, 1, 1),
        **_switching(constant_switching(np.zeros((1, 1)), 1)),
        kernel=no_jumps(1),
        qbar=1.0,
        H=1.0,
        rho=linear_modulus(),
        lambda0=float(sigma) ** 2,
        theta_mod=zero_modulus(),
        name="linear_drift",
    )


def telegraph(rate=1.0) -> ModelSpec:
    """``dX = s(Lambda) dt`` with ``s = +1, -1`` and a symmetric two-state chain."""
    return ModelSpec(
        d=1,
        n0=2,
        drift=constant_drift([1.0, -1.0], 2, 1),
        sigma=constant_sigma(0.0, 2, 1),
        **_switching(constant_switching([[0, rate], [rate, 0]], 2)),
        kernel=no_jumps(2),
        qbar=max(rate, 1e-12),
        H=max(rate, 1e-12),
        name="telegraph",
    )


def constant_rate_two_state(c=1.0, sigma=1.0, theta=1.0) -> ModelSpec:
    """Two regimes with constant switching rate ``c``; OU diffusion in each."""
    return ModelSpec(
        d=1,
        n0=2,
        drift=ou_drift([theta, 2.0 * theta], [0.5, -0.5], 2, 1),
        sigma=constant_sigma(sigma, 2, 1),
        **_switching(constant_switching([[0, c], [c, 0]], 2)),
        kernel=no_jumps(2),
        qbar=c,
        H=c,
        rho=linear_modulus(),
        lambda0=float(sigma) ** 2,
        theta_mod=zero_modulus(),
        name="constant_rate_two_state",
    )


def two_regime_benchmark(jumps: bool = True) -> ModelSpec:
    """OU drift per regime, sinusoidal rates in [0.5, 1.5], modulated compound Poisson jumps.

    ``q_01(x) = 1 + sin(x)/2``, ``q_10(x) = 1 + cos(x)/2``; jump intensity
    ``(0.75 + 0.25 cos x) * (2, 3)`` with normal sizes ``N(+-0.3, 0.8^2)``.
    """
    n0, d = 2, 1
    if jumps:
        kernel = compound_poisson(
            [2.0, 3.0],
            NormalLaw([[0.3], [-0.3]], [0.8, 0.8]),
            modulation=cosine_modulation(0.75, 0.25),
        )
    else:
        kernel = no_jumps(n0)
    Q, Qd = sinusoidal_switching([[0, 1.0], [1.0, 0]], [[0, 0.5], [0.5, 0]], [[0, 0.0], [math.pi / 2, 0]], n0)
    return ModelSpec(
        d=d,
        n0=n0,
        drift=ou_drift([1.0, 2.0], [0.5, -0.5], n0, d),
        sigma=constant_sigma([0.5, 0.8], n0, d),
        switching=Q,
        switching_diag=Qd,
        kernel=kernel,
        qbar=1.5,
        H=1.5,
        eps0=1.0,
        rho=linear_modulus(),
        lambda0=0.25,
        theta_mod=zero_modulus(),
        name="two_regime_benchmark",
    )


BUILTINS = {
    "constant_coefficient": constant_coefficient,
    "brownian": brownian,
    "linear_drift": linear_drift,
    "telegraph": telegraph,
    "constant_rate_two_state": constant_rate_two_state,
    "two_regime_benchmark": two_regime_benchmark,
}


# ----------------------------------------------------------------------------
# JSON configuration


def _schema(name: str) -> dict:
    return json.loads(resources.files("rsjd").joinpath("schema", name).read_text())


def _law(cfg, n0, d):
    if cfg["kind"] == "normal":
        return NormalLaw(_per_regime(cfg["mean"], n0, d, "jump mean"), np.broadcast_to(cfg["std"], (n0,)))
    if cfg["kind"] == "point":
        return PointLaw(_per_regime(cfg["atoms"], n0, d, "jump atoms"))
    raise ModelError(f"unknown jump law {cfg['kind']!r}")


def model_from_config(cfg: dict) -> ModelSpec:
    """Build a model from a parsed configuration (validated against the schema)."""
    try:
        jsonschema.validate(cfg, _schema("model.schema.json"))
    except jsonschema.ValidationError as e:
        raise ModelError(f"model config invalid at {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}") from e
    if "builtin" in cfg:
        name = cfg["builtin"]
        if name not in BUILTINS:
            raise ModelError(f"unknown builtin model {name!r}")
        params = dict(cfg.get("params", {}))
        if name == "constant_coefficient" and "jump_law" in params:
            params["jump_law"] = _law(params["jump_law"], params.get("n0", 1), params.get("d", 1))
        spec = BUILTINS[name](**params)
        overrides = {k: cfg[k] for k in ("eps0", "H", "qbar", "lambda0", "delta0") if k in cfg}
        if "rho" in cfg:
            overrides["rho"] = modulus_from_config(cfg["rho"])
        if "theta_mod" in cfg:
            overrides["theta_mod"] = modulus_from_config(cfg["theta_mod"])
        return spec.with_changes(**overrides) if overrides else spec

    d, n0 = cfg["d"], cfg["n0"]
    dr = cfg["drift"]
    if dr["kind"] == "constant":
        drift = constant_drift(dr["b"], n0, d)
    else:
        drift = ou_drift(dr["theta"], dr["mu"], n0, d)
    sigma = constant_sigma(cfg["diffusion"]["sigma"], n0, d)
    sw = cfg.get("switching", {"kind": "none"})
    if sw["kind"] == "none":
        Q, Qd = constant_switching(np.zeros((n0, n0)), n0)
    elif sw["kind"] == "hat":
        Q, Qd = hat_switching(n0)
    elif sw["kind"] == "constant":
        Q, Qd = constant_switching(sw["rates"], n0)
    else:
        Q, Qd = sinusoidal_switching(sw["base"], sw["amp"], sw.get("phase", np.zeros((n0, n0))), n0)
    jp = cfg.get("jumps", {"kind": "none"})
    if jp["kind"] == "none":
        kernel = no_jumps(n0)
    else:
        mod = jp.get("modulation")
        kernel = compound_poisson(
            np.broadcast_to(np.asarray(jp["rate"], dtype=float), (n0,)),
            _law(jp["law"], n0, d),
            modulation=cosine_modulation(mod["base"], mod["amp"]) if mod else None,
        )
    return ModelSpec(
        d=d,
        n0=n0,
        drift=drift,
        sigma=sigma,
        switching=Q,
        switching_diag=Qd,
        kernel=kernel,
        qbar=cfg["qbar"],
        H=cfg.get("H", 1.0),
        eps0=cfg.get("eps0", 1.0),
        rho=modulus_from_config(cfg.get("rho", {"kind": "linear"})),
        lambda0=cfg.get("lambda0", 0.0),
        theta_mod=modulus_from_config(cfg.get("theta_mod")),
        delta0=cfg.get("delta0", 1.0),
        name=cfg.get("name", "model"),
    )


def load_model(path) -> ModelSpec:
    p = Path(path)
    if not p.is_file():
        raise ModelError(f"model file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ModelError(f"model file {p} is not valid JSON: {e}") from e
    return model_from_config(cfg)
