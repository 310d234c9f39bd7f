import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crowdflow.diagnostics import gaussian_bump
from crowdflow.geometry import BoundarySegment, Grid, WalkingDomain
from crowdflow.perception import (PerceptionConfig, build_region, interaction_direction, perceive,
                                  perceive_1d, strategy_s1, strategy_s2, strategy_s3, strategy_s4,
                                  walking_direction)

from oracles import perception_oracle_worst_error, random_perception_instance as random_instance


def test_strategies_match_brute_force():
    assert perception_oracle_worst_error(40, seed=7) < 1e-12


def test_single_cell_path_matches_kernel():
    rng = np.random.default_rng(3)
    fns = {"s1": strategy_s1, "s2": strategy_s2, "s3": strategy_s3, "s4": strategy_s4}
    for _ in range(15):
        dom, rho, e_d, delta = random_instance(rng)
        for code, fn in fns.items():
            cfg = PerceptionConfig(strategy=code)
            res = perceive(dom, rho, e_d, delta, cfg)
            for i, j in zip(*np.nonzero(dom.free)):
                reg = build_region(dom, (i, j), e_d[i, j], delta[i, j], cfg.alpha_bar)
                _, rp = fn(reg, rho)
                assert abs(rp - res.rho_p[i, j]) < 1e-12


# ------------------------------------------------------------------ examples

def test_region_1d_interval():
    dom = WalkingDomain.interval(100)
    reg = build_region(dom, (30, 0), (1, 0), 0.2, 0.0)
    assert reg.cells[:, 0].tolist() == list(range(30, 51))


def test_region_cone_and_obstacles():
    g = Grid(40, 40, 0.025)
    obstacle = np.zeros(g.shape, bool)
    obstacle[24, 20] = True
    dom = WalkingDomain(g, obstacle, [BoundarySegment("exit", "right", 0.4, 0.6)])
    reg = build_region(dom, (20, 20), (1, 0), 0.2, math.radians(85))
    cells = {tuple(c) for c in reg.cells}
    assert (24, 20) not in cells          # obstacle straight ahead
    assert (16, 20) not in cells          # behind
    assert (23, 20) in cells and (20, 20) in cells


def test_s1_examples():
    dom = WalkingDomain.interval(100)
    rho = np.full(100, 0.2)
    rho[50] = 0.6
    reg = build_region(dom, (30, 0), (1, 0), 0.2, 0.0)
    assert strategy_s1(reg, rho)[1] == 0.6
    rho_p, _ = perceive_1d(np.full(100, 0.37), np.full(100, 0.2), 0.01, "s1")
    assert np.all(rho_p == 0.37)


def test_s2_ties_closest():
    dom = WalkingDomain.interval(100)
    rho = np.full(100, 0.1)
    rho[40] = rho[60] = 0.5
    reg = build_region(dom, (30, 0), (1, 0), 0.35, 0.0)
    xp, rp = strategy_s2(reg, rho)
    assert rp == 0.5 and xp[0] == pytest.approx(0.405)
    xp, rp = strategy_s2(build_region(dom, (30, 0), (1, 0), 0.35, 0.0), np.full(100, 0.3))
    assert xp[0] == pytest.approx(0.305)


def test_s3_examples():
    dom = WalkingDomain.interval(100)
    rho = np.full(100, 0.25)
    rho[50] = 0.55
    reg = build_region(dom, (30, 0), (1, 0), 0.2, 0.0)
    assert strategy_s3(reg, rho)[1] == pytest.approx(0.31, abs=1e-15)
    dec = np.linspace(0.9, 0.1, 100)
    rho_p, x_p = perceive_1d(dec, np.full(100, 0.2), 0.01, "s3")
    assert np.array_equal(rho_p, dec)


def test_s4_examples():
    dom = WalkingDomain.interval(100)
    K = 20
    rho = np.zeros(100)
    rho[30:31 + K] = 0.6 * np.arange(K + 1) / K
    reg = build_region(dom, (30, 0), (1, 0), 0.2, 0.0)
    xp, rp = strategy_s4(reg, rho)
    assert rp == pytest.approx(0.3, abs=1e-15)
    # discrete first moment: 2 delta / 3 + dx / 3 from the observer
    assert xp[0] - 0.305 == pytest.approx(2 * 0.2 / 3 + 0.01 / 3, abs=1e-12)
    rp, _ = perceive_1d(np.full(100, 0.42), np.full(100, 0.2), 0.01, "s4")
    assert np.allclose(rp, 0.42, rtol=0, atol=1e-15)


def test_interaction_and_walking_direction():
    assert interaction_direction((0.2, 0.5), (0.4, 0.5), (1, 0), 0.01) == pytest.approx([-1, 0])
    e = np.array([0.6, 0.8])
    e_i = interaction_direction((0.2, 0.5), np.array([0.2, 0.5]) + 0.3 * e, e, 0.01)
    assert np.allclose(e_i, -e, rtol=0, atol=1e-15)
    assert interaction_direction((0.2, 0.5), (0.2, 0.5), e, 0.01) == pytest.approx(-e)
    assert interaction_direction((0.2, 0.5), (0.2, 0.5), e, 0.01, "none") == pytest.approx(e)
    assert walking_direction((1, 0), (-1, 0), 0.7) == pytest.approx([1, 0])
    assert walking_direction((0, 1), (0, 1), 0.3) == pytest.approx([0, 1])
    s = 1 / math.sqrt(2)
    assert walking_direction((1, 0), (0, 1), 0.5) == pytest.approx([s, s])
    assert walking_direction((1, 0), (-1, 0), 0.5) == pytest.approx([1, 0])
    assert walking_direction((0, 1), (1, 0), 0.2, one_d=True) == pytest.approx([1, 0])


def test_s1_interaction_is_minus_ed_in_2d():
    g = Grid(30, 30, 1 / 30)
    dom = WalkingDomain.from_rectangles(g, [], [BoundarySegment("exit", "right", 0.3, 0.7)])
    phi = 0.3
    e_d = np.zeros(g.shape + (2,))
    e_d[...] = (math.cos(phi), math.sin(phi))
    res = perceive(dom, np.full(g.shape, 0.2), e_d, np.full(g.shape, 0.1), PerceptionConfig(strategy="s1"))
    assert np.allclose(res.e_i, -e_d, atol=1e-12)


def test_gaussian_1d_s2_plateau():
    from crowdflow.fundamental import PRESETS
    g = Grid.line(200)
    rho = gaussian_bump(g).reshape(-1)
    fd = PRESETS["europe-rush"].nondimensional()
    delta = (1 - g.x1) * fd.speed(rho) + 0.05
    rho_p, _ = perceive_1d(rho, delta, g.dx, "s2")
    peak = rho.max()
    assert np.all(rho_p[g.x1 <= 0.4] == peak)


# ---------------------------------------------------------------- properties

field_seed = st.integers(0, 2**31 - 1)


@given(field_seed, st.sampled_from(["s1", "s2", "s3"]))
def test_within_region_range(seed, code):
    rng = np.random.default_rng(seed)
    dom, rho, e_d, delta = random_instance(rng)
    cfg = PerceptionConfig(strategy=code)
    res = perceive(dom, rho, e_d, delta, cfg)
    for i, j in zip(*np.nonzero(dom.free)):
        reg = build_region(dom, (i, j), e_d[i, j], delta[i, j], cfg.alpha_bar)
        vals = reg.values(rho)
        assert vals.min() - 1e-15 <= res.rho_p[i, j] <= vals.max() + 1e-15
    assert np.all((res.rho_p >= 0) & (res.rho_p <= 1))


@given(field_seed)
def test_s3_convex_combination(seed):
    rng = np.random.default_rng(seed)
    dom, rho, e_d, delta = random_instance(rng)
    res = perceive(dom, rho, e_d, delta, PerceptionConfig(strategy="s3"))
    s2 = perceive(dom, rho, e_d, delta, PerceptionConfig(strategy="s2"))
    lo = np.minimum(rho, s2.rho_p) - 1e-15
    hi = np.maximum(rho, s2.rho_p) + 1e-15
    assert np.all((res.rho_p >= lo) & (res.rho_p <= hi))


@given(st.floats(0.0, 1.0), st.sampled_from(["s1", "s2", "s3", "s4"]))
def test_uniform_field(c, code):
    g = Grid(20, 20, 0.05)
    dom = WalkingDomain.from_rectangles(g, [], [BoundarySegment("exit", "right", 0.0, 1.0)])
    e_d = np.zeros(g.shape + (2,))
    e_d[..., 0] = 1.0
    res = perceive(dom, np.full(g.shape, c), e_d, np.full(g.shape, 0.15), PerceptionConfig(strategy=code))
    if code == "s4":
        # cells whose region touches the exit see empty space beyond it
        inner = res.rho_p[:15, 4:16]
        assert np.allclose(inner, c, rtol=0, atol=1e-15)
    else:
        assert np.all(res.rho_p == c)


@given(field_seed, st.sampled_from(["s1", "s2", "s3", "s4"]))
def test_anisotropy_behind_cone_ignored(seed, code):
    rng = np.random.default_rng(seed)
    dom, rho, e_d, delta = random_instance(rng)
    cfg = PerceptionConfig(strategy=code)
    base = perceive(dom, rho, e_d, delta, cfg)
    g = dom.grid
    i, j = map(int, np.argwhere(dom.free)[rng.integers(dom.free.sum())])
    X1, X2 = g.centres()
    off = np.stack([X1 - X1[i, j], X2 - X2[i, j]], axis=-1)
    r = np.hypot(off[..., 0], off[..., 1])
    cosang = (off @ e_d[i, j]) / np.where(r > 0, r, 1)
    behind = (r > 0) & (cosang < math.cos(cfg.alpha_bar) - 1e-9)
    rho2 = rho.copy()
    rho2[behind & dom.free] = rng.random(int((behind & dom.free).sum()))
    new = perceive(dom, rho2, e_d, delta, cfg)
    assert new.rho_p[i, j] == base.rho_p[i, j]
