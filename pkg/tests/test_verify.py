import json
import math

import numpy as np
import pytest
from scipy import stats

from rsjd import zoo
from rsjd.model import ModelError, NormalLaw, PointLaw, bump
from rsjd.verify import (
    ANCHORS,
    CheckReport,
    big_jump_law_check,
    bump_battery,
    char_martingale_check,
    compensator_check,
    disjointness_check,
    feller_modulus,
    generator_one_sample,
    martingale_residual,
    mean_one_check,
    measure_change_equivalence,
    multiple_testing_note,
    run_suite,
    switch_law_check,
    with_step_guard,
)
from rsjd.model import generator_apply, QuadratureConfig


def _report(stat, thr):
    return CheckReport("mean_one", ANCHORS["mean_one"], stat, 0.1, thr, False)


def test_report_pass_flag_follows_statistic():
    assert _report(0.1, 0.3).passed and not _report(0.4, 0.3).passed
    rec = json.loads(_report(0.1, 0.3).to_json())
    assert rec["check"] == "mean_one" and rec["pass"] is True and rec["runtime_ms"] is None


def test_step_guard_reruns_only_on_failure():
    calls = []

    def check(h):
        calls.append(h)
        return [_report(0.5 if h == 0.1 else 0.1, 0.3)]

    out = with_step_guard(check, 0.1)
    assert calls == [0.1, 0.05] and out[0].passed
    calls.clear()
    with_step_guard(lambda h: calls.append(h) or [_report(0.1, 0.3)], 0.1)
    assert calls == [0.1]


def test_multiple_testing_note():
    assert multiple_testing_note([_report(0, 1)] * 10) is None
    assert "12 checks" in multiple_testing_note([_report(0, 1)] * 12)


def test_one_sample_generator_is_unbiased(bench):
    fs = [bump([0.0], 1.5, [1.0, 0.5])]
    x = np.full((200_000, 1), 0.3)
    k = np.ones(200_000, dtype=np.int64)
    s = generator_one_sample(bench, fs, x, k, np.random.default_rng(1))[0]
    ref, ref_se = generator_apply(bench, fs[0], [0.3], 1, QuadratureConfig(1 << 18), seed=2)
    assert abs(s.mean() - ref) <= 4 * math.hypot(s.std() / math.sqrt(s.size), ref_se)


def test_mean_one_on_benchmark(bench):
    assert mean_one_check(bench, [0.0], 0, 1.0, 20_000, 1, h=1e-2).passed


def test_switch_law_checks():
    for n0 in (2, 3):
        reps = switch_law_check(n0, 20_000, 3)
        assert [r.name for r in reps] == ["switch_law", "switch_target"]
        assert all(r.passed for r in reps)
    with pytest.raises(ValueError):
        switch_law_check(1, 10, 0)


def test_measure_change_on_benchmark(bench):
    phis = [lambda x, k: (k == 0).astype(float), lambda x, k: np.tanh(x[:, 0])]
    reps = measure_change_equivalence(bench, phis, [0.0], 0, 1.0, 20_000, 5, h=1e-2)
    assert all(r.passed for r in reps)


def test_martingale_residual_small(bench):
    reps = martingale_residual(bench, bump_battery(bench, [0.0], 1), [0.0], 0, [(0.0, 0.5)], 4000, "direct", 2, h=1e-2)
    assert {r.detail["form"] for r in reps} == {"mean", "witness"}
    assert all(r.passed for r in reps)


def test_char_martingale_at_zero_is_exact():
    reps = char_martingale_check(zoo.brownian(), [[0.0]], [0.0], 0, 1.0, 200, 1, h=1e-2, mode="constant")
    assert all(r.statistic == 0.0 for r in reps)


def test_char_martingale_brownian_and_point_mass():
    reps = char_martingale_check(zoo.brownian(), [[0.7], [1.5]], [0.0], 0, 1.0, 20_000, 2, h=1e-2, mode="constant")
    assert all(r.passed for r in reps)
    assert reps[0].detail["target"] == pytest.approx(math.exp(-0.5 * 0.49))
    cp = zoo.constant_coefficient(sigma=0.0, jump_rate=0.8, jump_law=PointLaw([[1.2]]))
    reps = char_martingale_check(cp, [[1.0]], [0.0], 0, 1.0, 20_000, 3, h=1e-2, mode="constant")
    want = np.exp(0.8 * (np.exp(1j * 1.2) - 1.0))
    assert reps[0].detail["target"] == pytest.approx(want.real, abs=1e-12)
    assert all(r.passed for r in reps)


def test_char_martingale_general_mode(bench):
    reps = char_martingale_check(bench, [[1.0]], [0.0], 0, 1.0, 10_000, 4, h=1e-2, mode="general")
    assert len(reps) == 2 and all(r.passed for r in reps)
    with pytest.raises(ModelError):
        char_martingale_check(bench, [[1.0]], [0.0], 0, 1.0, 10, 4, mode="constant")


def test_compensator_check(bench):
    r = compensator_check(bench, None, [0.0], 0, 1.0, 20_000, 6, h=1e-2)
    assert r.passed and r.detail["mean_count"] > 0.3


def test_big_jump_law_exact_mode():
    # point mass outside eps: big-jump rate 2, survival e^{-2} at t = 1
    spec = zoo.constant_coefficient(sigma=0.5, jump_rate=2.0, jump_law=PointLaw([[1.5]]))
    reps = big_jump_law_check(spec, 1.0, [0.5, 1.0], [0.0], 0, 20_000, 7, h=1e-2)
    modes = [r.detail["mode"] for r in reps]
    assert modes == ["exact", "exact", "ks"]
    assert reps[1].detail["target"] == pytest.approx(math.exp(-2.0))
    assert all(r.passed for r in reps)


def test_big_jump_law_bounds_mode(bench):
    reps = big_jump_law_check(bench, 1.0, [1.0], [0.0], 0, 5000, 8, h=1e-2)
    assert reps[0].detail["mode"] == "bounds" and reps[0].passed


def test_disjointness_on_benchmark(bench):
    r = disjointness_check(bench, 2000, 2.0, 9)
    assert r.passed and r.detail["jumps"] > 0 and r.detail["switches"] > 0


def test_feller_moduli_lipschitz(bench):
    f = lambda y, k: np.tanh(y[:, 0])
    mods, reps = feller_modulus(bench, f, 0.5, [0.0], [0.05, 0.1, 0.2], 0, 4000, 10, h=1e-2)
    assert all(r.passed for r in reps)
    assert mods[0].value < mods[-1].value


def test_feller_moduli_indicator():
    f = lambda y, k: (y[:, 0] >= 0).astype(float)
    mods, reps = feller_modulus(zoo.brownian(), f, 1.0, [0.0], [0.02, 0.1], 0, 10_000, 11, "indicator", h=1e-2)
    assert all(r.passed for r in reps)
    exact = 2 * stats.norm.cdf(0.1 / 2) - 1  # P{coupling time > 1} at r = 0.1
    assert mods[1].value <= exact + 4 * mods[1].se


def test_run_suite_rejects_unknown_names(bench):
    with pytest.raises(ValueError, match="unknown"):
        run_suite(bench, "mean_one,nope")


def test_run_suite_selected(bench):
    reps = run_suite(bench, "mean_one,disjointness", seed=1, n_paths=2000, h=1e-2)
    assert [r.name for r in reps] == ["mean_one", "disjointness"]
