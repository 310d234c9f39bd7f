import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdflow import diagnostics as dg
from crowdflow import scenario as scn
from crowdflow import solver2d
from crowdflow.fundamental import PRESETS
from crowdflow.geometry import BoundarySegment, Grid, WalkingDomain
from crowdflow.perception import PerceptionConfig
from oracles import overlap_push


def box(n1=12, n2=10, dx=0.1, obstacles=(), segments=None):
    g = Grid(n1, n2, dx)
    if segments is None:
        segments = [BoundarySegment("exit", "right", 0.0, g.length2, "out")]
    return WalkingDomain.from_rectangles(g, obstacles, segments)


def uniform_v(dom, vx, vy):
    v = np.zeros(dom.grid.shape + (2,))
    v[..., 0], v[..., 1] = vx, vy
    return v


def interior_field(dom, rng, margin=2):
    rho = np.zeros(dom.grid.shape)
    rho[margin:-margin, margin:-margin] = rng.uniform(0.0, 1.0, (dom.grid.n1 - 2 * margin, dom.grid.n2 - 2 * margin))
    return rho


# ------------------------------------------------------------ push-forward

def test_zero_velocity_is_identity():
    dom = box()
    rho = np.random.default_rng(0).uniform(0, 1, dom.grid.shape)
    out, ex = solver2d.push_forward(rho, np.zeros(dom.grid.shape + (2,)), 0.05, dom)
    assert np.array_equal(out, rho)
    assert np.all(ex == 0)


@pytest.mark.parametrize("capacity", [None, 1.0])
def test_integer_shift_is_bitwise(capacity):
    dom = box()
    rho = interior_field(dom, np.random.default_rng(1))
    dt = 0.05
    out, _ = solver2d.push_forward(rho, uniform_v(dom, dom.grid.dx / dt, 0.0), dt, dom, capacity=capacity)
    expect = np.zeros_like(rho)
    expect[1:] = rho[:-1]
    assert np.array_equal(out, expect)


def test_half_cell_diagonal_matches_rectangle_oracle():
    dom = box(10, 9, 0.1)
    rho = interior_field(dom, np.random.default_rng(2))
    dt = 0.1
    h = dom.grid.dx / (2 * dt)
    out, _ = solver2d.push_forward(rho, uniform_v(dom, h, h), dt, dom, capacity=None)
    disp = np.full(rho.shape + (2,), 0.5 * dom.grid.dx)
    ref = np.zeros_like(rho)
    for (a, b), m in overlap_push(rho, disp, dom.grid.dx).items():
        ref[a, b] += m
    assert np.max(np.abs(out - ref)) < 1e-12
    # explicit quarter split of a single cell
    one = np.zeros(dom.grid.shape)
    one[4, 4] = 0.8
    out1, _ = solver2d.push_forward(one, uniform_v(dom, h, h), dt, dom, capacity=None)
    assert out1[4, 4] == out1[5, 4] == out1[4, 5] == out1[5, 5] == 0.2


def test_cfl_violation_raises():
    dom = box()
    with pytest.raises(solver2d.CFLError):
        solver2d.push_forward(np.ones(dom.grid.shape) * 0.1, uniform_v(dom, 1.0, 0.0), 0.11, dom)


@settings(max_examples=40)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.integers(0, 2**31 - 1))
def test_interior_conservation_and_bounds(vx, vy, seed):
    dom = box(10, 10, 0.1)
    rng = np.random.default_rng(seed)
    rho = interior_field(dom, rng)
    v = np.stack([vx * rng.uniform(0.2, 1, rho.shape), vy * rng.uniform(0.2, 1, rho.shape)], axis=-1)
    speed = np.hypot(v[..., 0], v[..., 1]).max()
    dt = min(0.9 * dom.grid.dx / speed, 1.0) if speed > 0.09 * dom.grid.dx else 1.0
    out, ex = solver2d.push_forward(rho, v, dt, dom)
    assert abs(out.sum() - rho.sum()) * dom.grid.cell_measure < 1e-12
    assert np.all(ex == 0)
    assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-14


def test_walls_stop_normal_motion_and_let_mass_slide():
    dom = box(6, 6, 0.1, segments=[BoundarySegment("exit", "right", 0.0, 0.1, "out")])
    rho = np.zeros(dom.grid.shape)
    rho[2, 5] = 0.4  # top row, pushed up and right
    dt = 0.1
    out, _ = solver2d.push_forward(rho, uniform_v(dom, 0.5, 0.5), dt, dom, capacity=None)
    assert out[:, 5].sum() == pytest.approx(0.4)
    assert out[2, 5] == pytest.approx(0.2) and out[3, 5] == pytest.approx(0.2)


def test_obstacle_shares_are_renormalised():
    dom = box(8, 8, 0.1, obstacles=[(0.5, 0.6, 0.0, 0.8)])  # column i = 5 blocked
    rho = np.zeros(dom.grid.shape)
    rho[4, 3] = 0.6
    dt = 0.1
    out, _ = solver2d.push_forward(rho, uniform_v(dom, 0.5, 0.5), dt, dom, capacity=None)
    assert out[dom.obstacle].sum() == 0.0
    assert out.sum() == pytest.approx(0.6, abs=1e-15)
    assert out[4, 3] == pytest.approx(0.3) and out[4, 4] == pytest.approx(0.3)


def test_exit_tally_counts_leaving_mass():
    dom = box(6, 4, 0.1)
    rho = np.zeros(dom.grid.shape)
    rho[5, :] = 0.5
    dt = 0.1
    out, ex = solver2d.push_forward(rho, uniform_v(dom, 0.5, 0.0), dt, dom, capacity=None)
    assert ex[0] == pytest.approx(4 * 0.25)
    assert out.sum() + ex.sum() == pytest.approx(rho.sum(), abs=1e-15)


def test_capacity_limiter_keeps_density_bounded():
    dom = box(6, 3, 0.1)
    rho = np.zeros(dom.grid.shape)
    rho[2, 1] = 0.9
    rho[3, 1] = 0.9
    v = np.zeros(dom.grid.shape + (2,))
    v[2, 1, 0] = 0.9  # rear cell runs into a stationary dense one
    free, _ = solver2d.push_forward(rho, v, 0.1, dom, capacity=None)
    assert free.max() > 1.0
    out, _ = solver2d.push_forward(rho, v, 0.1, dom)
    assert out.max() <= 1.0
    assert out.sum() == pytest.approx(rho.sum(), abs=1e-14)


# ---------------------------------------------------------------- velocity

@pytest.fixture(scope="module")
def strip_model():
    g = Grid(20, 10, 0.05)
    segs = [BoundarySegment("inlet", "left", 0.0, g.length2, "in"),
            BoundarySegment("exit", "right", 0.0, g.length2, "out")]
    dom = WalkingDomain.from_rectangles(g, [], segs)
    fd = PRESETS["asia-rush"].nondimensional()
    return dom, fd


def test_empty_crowd_walks_at_free_speed_along_desired_direction(strip_model):
    dom, fd = strip_model
    model = solver2d.Model2D(dom, fd, PerceptionConfig("s2"))
    v, _ = solver2d.assemble_velocity(model, np.zeros(dom.grid.shape))
    assert np.allclose(np.hypot(v[..., 0], v[..., 1]), 1.0, atol=0, rtol=1e-15)
    assert np.allclose(v, model.e_d, atol=1e-15)


def test_s1_keeps_walking_direction_on_desired_direction(strip_model):
    dom, fd = strip_model
    model = solver2d.Model2D(dom, fd, PerceptionConfig("s1"))
    rho = np.random.default_rng(3).uniform(0, 0.8, dom.grid.shape)
    v, _ = solver2d.assemble_velocity(model, rho)
    speed = np.hypot(v[..., 0], v[..., 1])
    moving = speed > 0
    assert np.allclose(v[moving] / speed[moving][:, None], model.e_d[moving], atol=1e-12)


def test_uniform_half_density_gives_diagram_speed(strip_model):
    dom, fd = strip_model
    model = solver2d.Model2D(dom, fd, PerceptionConfig("s2"))
    v, _ = solver2d.assemble_velocity(model, np.full(dom.grid.shape, 0.5))
    speed = np.hypot(v[..., 0], v[..., 1])
    assert speed[10, 5] == pytest.approx(float(fd.speed(0.5)), rel=1e-14)


# ------------------------------------------------------------------ station

@pytest.fixture(scope="module")
def station():
    sc = scn.resolve(scn.load("station"))
    return sc


def station_model(sc, strategy, inflow=None):
    cfg = PerceptionConfig(**{**sc["perception"], "strategy": strategy})
    return solver2d.Model2D(scn.build_domain(sc), scn.fundamental_diagram(sc).nondimensional(), cfg,
                            inflow or scn.inflow(sc), cfl=sc["solver"]["cfl"])


def test_empty_station_without_inflow_stays_empty(station):
    model = station_model(station, "s3", inflow=lambda t: 0.0)
    state = solver2d.initial_state(model, 0.0)
    state = solver2d.run(model, state, 0.2)
    assert np.all(state.rho == 0.0)
    assert state.exited.sum() == 0.0


def test_station_mass_audit_balances(station):
    model = station_model(station, "s3")
    state = solver2d.initial_state(model, 0.0)
    masses = []

    def check(st_, info):
        masses.append(abs(solver2d.mass_audit(st_, model.domain.grid.cell_measure)))
    state = solver2d.run(model, state, 0.4, callback=check)
    assert max(masses) < 1e-10
    assert state.inlet_mass > 0 and state.rho.min() >= 0.0


def _corridor_flux_series(sc, strategy, t_end):
    model = station_model(sc, strategy)
    grid = model.domain.grid
    gates = [dg.Gate(g["name"], g["axis"], g["position"], g["lo"], g["hi"]) for g in sc["gates"]]
    state = solver2d.initial_state(model, 0.0)
    T, Q = [], []
    while state.t < t_end:
        old = state
        state, _ = solver2d.step2d(model, state)
        T.append(state.t)
        Q.append([dg.corridor_flux(old.rho, state.v, grid, g) for g in gates])
    return model, [g.name for g in gates], np.asarray(T), np.asarray(Q)


@pytest.mark.slow
def test_station_s2_splits_between_upper_and_middle(station):
    model, names, T, Q = _corridor_flux_series(station, "s2", 1.2)
    fd = model.fd
    q_in = dg.inlet_flux(fd, 0.02, station["diagnostics"]["reference_width"])
    upper, middle = Q[:, names.index("upper")], Q[:, names.index("middle")]
    assert upper.max() > 0.1 * q_in
    assert middle.max() > 0.1 * q_in


@pytest.mark.slow
def test_station_s1_prefers_upper_corridor(station):
    model, names, T, Q = _corridor_flux_series(station, "s1", 1.2)
    peaks = Q.max(axis=0)
    assert peaks[names.index("upper")] == peaks.max()
