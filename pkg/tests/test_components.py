import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gridstab.components import (
    GFL, GFM, J, ConverterParams, ConverterSetpoint, SGParams, converter_rhs, init_converter,
    init_sg, pll_output, rotate_to_local, rotate_to_network, rotation, sg_rhs,
)
from gridstab.components import converter as conv
from gridstab.components import synchronous as sgm
from gridstab.components.frames import active_power, converter_reactive_power
from gridstab.errors import InfeasibleOperatingPoint, ValidationError

from conftest import config_data

RAW = config_data("three_bus.json")["units"]
GFM_P = ConverterParams.from_dict(RAW[0]["params"], GFM)
GFL_P = ConverterParams.from_dict(RAW[1]["params"], GFL)
def _sg_params():
    for u in config_data("ieee39.json")["units"]:
        if u["kind"] == "SG":
            return SGParams.from_dict(u["params"])


SG_P = _sg_params()


def terminal(v, ang, p, q):
    """Network-frame (v, i) for a unit injecting p + jq at v∠ang."""
    vc = v * np.exp(1j * ang)
    ic = np.conj(complex(p, q) / vc)
    return np.array([vc.real, vc.imag]), np.array([ic.real, ic.imag])


# ---- power forms and frames ----------------------------------------------------

def test_active_power_aligned():
    assert active_power(1.0, 0.0, 0.5, 0.0) == 0.5
    assert converter_reactive_power(1.0, 0.0, 0.5, 0.0) == 0.0


def test_reactive_power_sign_locked():
    v, i = np.array([1.0, 0.0]), np.array([0.0, 0.3])
    oracle = v @ J.T @ i  # bilinear form evaluated as a matrix product
    assert oracle == pytest.approx(0.3)
    assert converter_reactive_power(*v, *i) == pytest.approx(oracle)


def test_j_is_quarter_rotation():
    np.testing.assert_allclose(J, rotation(math.pi / 2), atol=1e-16)


def test_rotate_examples():
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(rotate_to_network(x, 0.4, 0.4), x)
    np.testing.assert_allclose(rotate_to_network([1.0, 0.0], math.pi / 2, 0.0), [0.0, 1.0], atol=1e-16)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_rotation_isometry(a, b, d, q):
    x = np.array([d, q])
    y = rotate_to_network(x, a, b)
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x), rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(rotate_to_local(y, a, b), x, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-math.pi, math.pi), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_power_invariance(angle, vals):
    v, i = np.array(vals[:2]), np.array(vals[2:])
    vr, ir = rotate_to_network(v, angle, 0.0), rotate_to_network(i, angle, 0.0)
    assert active_power(*vr, *ir) == pytest.approx(active_power(*v, *i), abs=1e-12)
    assert converter_reactive_power(*vr, *ir) == pytest.approx(converter_reactive_power(*v, *i), abs=1e-12)


# ---- PLL ---------------------------------------------------------------------

def test_pll_examples():
    state = np.zeros(15)
    assert pll_output(GFL_P, state, 0.0, omega_g=1.0) == 1.0
    p = GFL_P.with_values(K_P_s=2.0, K_I_s=0.0)
    assert pll_output(p, state, 0.01, omega_g=1.0) == pytest.approx(1.02, abs=1e-15)
    p = GFL_P.with_values(K_P_s=1.0, K_I_s=0.5)
    state[conv.EPS] = 0.02
    assert pll_output(p, state, 0.0, omega_g=1.0) == pytest.approx(1.01, abs=1e-15)


# ---- parameters --------------------------------------------------------------

def test_gfm_rejects_pll_gains():
    with pytest.raises(ValidationError):
        ConverterParams.from_dict(RAW[1]["params"], GFM)


def test_gfl_needs_pll_gains():
    with pytest.raises(ValidationError):
        ConverterParams.from_dict(RAW[0]["params"], GFL)


@pytest.mark.parametrize("name, value", [("R_p", 0.0), ("l_f", -1.0), ("K_F_v", 0.5), ("r_v", -0.1)])
def test_bad_converter_params(name, value):
    with pytest.raises(ValidationError):
        ConverterParams.from_dict(dict(RAW[0]["params"], **{name: value}), GFM)


def test_bad_sg_params():
    with pytest.raises(ValidationError):
        SGParams.from_dict(dict(SG_P.to_dict(), H=0.0))
    with pytest.raises(ValidationError):
        SGParams.from_dict(dict(SG_P.to_dict(), x_d1=2.5))


# ---- equilibrium back-solve ----------------------------------------------------

def test_gfm_droop_states_vanish():
    v, i = terminal(1.02, 0.1, 0.7, 0.2)
    state, sp = init_converter(GFM_P, GFM, v, i)
    assert state[conv.OMEGA_T] == 0.0 and state[conv.V_T] == 0.0
    # explicitly given setpoints equal to the measured powers give the same result
    state2, _ = init_converter(GFM_P, GFM, v, i, setpoint=sp)
    assert abs(state2[conv.OMEGA_T]) < 1e-14 and abs(state2[conv.V_T]) < 1e-14


def test_gfl_active_power_mismatch_rejected():
    v, i = terminal(1.0, 0.0, 0.5, 0.0)
    with pytest.raises(InfeasibleOperatingPoint):
        init_converter(GFL_P, GFL, v, i, setpoint=ConverterSetpoint(p=0.6, q=0.0, v=1.0))


def _local_voltage(state, v):
    return rotate_to_local(v, state[conv.THETA_C], 0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.85, 1.15), st.floats(-math.pi, math.pi), st.floats(-1.0, 1.0), st.floats(-0.6, 0.6),
       st.sampled_from([GFM, GFL]), st.booleans())
def test_converter_init_is_equilibrium(vm, ang, p, q, mode, keep_setpoint):
    params = GFL_P if mode == GFL else GFM_P
    v, i = terminal(vm, ang, p, q)
    sp = None
    if keep_setpoint:
        # a GFL can only hold its measured active power (otherwise the PLL frame drifts)
        _, sp0 = init_converter(params, mode, v, i)
        sp = ConverterSetpoint(p=sp0.p + (0.05 if mode == GFM else 0.0), q=sp0.q - 0.02, v=1.0)
    state, sp = init_converter(params, mode, v, i, setpoint=sp)
    rhs = converter_rhs(params, sp, state, mode, _local_voltage(state, v), omega_g=1.0)
    assert np.max(np.abs(rhs)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(0.9, 1.1), st.floats(-math.pi, math.pi), st.floats(-0.9, 1.0), st.floats(-0.5, 0.5))
def test_sg_init_is_equilibrium(vm, ang, p, q):
    v, i = terminal(vm, ang, p, q)
    state, sp = init_sg(SG_P, v, i)
    vl = rotate_to_local(v, sgm.frame_angle(state[sgm.DELTA]), 0.0)
    rhs = sg_rhs(SG_P, sp, state, vl, omega_g=1.0)
    assert np.max(np.abs(rhs)) < 1e-9
    # the back-solved machine reproduces the terminal current
    il = np.array(sgm.stator_current(SG_P, state))
    np.testing.assert_allclose(rotate_to_network(il, sgm.frame_angle(state[sgm.DELTA]), 0.0), i, atol=1e-12)


def test_gfl_pll_locked_at_point_a(point_a):
    """At point A the PLL frame is aligned with the filter voltage."""
    sys_, x = point_a.system, point_a.x0
    slot = next(s for s in sys_.units if s.id == "GFL2")
    state = sys_.unit_state(slot, x)
    _, _, vfq = conv.converter_frequency(GFL_P, 1.0, state, GFL)
    assert abs(vfq) < 1e-12


# ---- structural properties ----------------------------------------------------

def _random_state(rng, mode):
    n = 15 if mode == GFL else 13
    s = 0.3 * rng.standard_normal(n)
    s[conv.V_F] += 1.0
    return s


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-math.pi, math.pi))
def test_filter_covariance(seed, alpha):
    """The RLC filter dynamics commute with a rotation of every 2-vector."""
    rng = np.random.default_rng(seed)
    vecs = [rng.standard_normal(2) for _ in range(5)]
    omega = 1.0 + 0.05 * rng.standard_normal()
    base = conv.filter_rhs(GFM_P, omega, *vecs)
    rot = conv.filter_rhs(GFM_P, omega, *[tuple(rotation(alpha) @ v) for v in vecs])
    for a, b in zip(base, rot):
        np.testing.assert_allclose(rotation(alpha) @ np.array(a), b, atol=1e-9 * GFM_P.omega_b)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-math.pi, math.pi), st.sampled_from([GFM, GFL]))
def test_converter_frame_covariance(seed, alpha, mode):
    """Rotating every network-frame quantity by alpha only shifts the frame angles."""
    rng = np.random.default_rng(seed)
    params = GFL_P if mode == GFL else GFM_P
    sp = ConverterSetpoint(p=0.5, q=0.1, v=1.0)
    state = _random_state(rng, mode)
    v_net = np.array([1.0, 0.1]) + 0.1 * rng.standard_normal(2)
    base = converter_rhs(params, sp, state, mode, rotate_to_local(v_net, state[0], 0.0), omega_g=1.0)
    shifted = state.copy()
    shifted[conv.THETA_C] += alpha
    if mode == GFL:
        shifted[conv.THETA_S] += alpha
    v_rot = rotate_to_network(v_net, alpha, 0.0)
    rot = converter_rhs(params, sp, shifted, mode, rotate_to_local(v_rot, shifted[0], 0.0), omega_g=1.0)
    np.testing.assert_allclose(rot, base, rtol=1e-10, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_gfl_reduces_to_gfm(seed):
    rng = np.random.default_rng(seed)
    gfl = GFL_P.with_values(K_P_s=0.0, K_I_s=0.0)
    state = _random_state(rng, GFL)
    v = rng.standard_normal(2)
    sp = ConverterSetpoint(p=0.3, q=-0.1, v=1.0, omega=1.0)
    a = converter_rhs(gfl, sp, state, GFL, v, omega_g=1.0)
    b = converter_rhs(GFM_P, sp, state[:13], GFM, v, omega_g=1.0)
    np.testing.assert_allclose(a[:13], b, rtol=1e-13, atol=1e-12)


# ---- synchronous generator ----------------------------------------------------

def test_sg_swing_limit():
    p = SGParams.from_dict(dict(SG_P.to_dict(), D=0.0))
    v, i = terminal(1.0, 0.2, 0.8, 0.1)
    state, sp = init_sg(p, v, i)
    vl = rotate_to_local(v, sgm.frame_angle(state[sgm.DELTA]), 0.0)
    t_e = state[sgm.PSID] * sgm.stator_current(p, state)[1] - state[sgm.PSIQ] * sgm.stator_current(p, state)[0]
    pert = state.copy()
    pert[sgm.OMEGA] += 0.01
    pert[sgm.GX1] = pert[sgm.GX2] = t_e + 0.1  # constant mechanical torque 0.1 above electrical
    rhs = sg_rhs(p, sp, pert, vl, omega_g=1.0)
    assert rhs[sgm.OMEGA] == pytest.approx(0.1 / (2 * p.H), rel=1e-12)


def test_sg_open_circuit_time_constant():
    """A field-voltage step on a lightly loaded machine relaxes with T'_d0."""
    p = SG_P
    r_load = 1e3  # nearly open circuit
    v0, i0 = terminal(1.0, 0.0, 1.0 / r_load, 0.0)
    state0, _ = init_sg(p, v0, i0)
    efd = state0[sgm.EFD] * 1.05

    def rhs(t, y):
        s = state0.copy()
        s[2:8] = y
        i_d, i_q = sgm.stator_current(p, s)
        rows = sgm.machine_rhs(p, s, efd, 0.0, r_load * i_d, r_load * i_q, omega_g=1.0)
        return np.array(rows[2:8])

    t_eval = np.linspace(0.0, 3 * p.T_d01, 301)
    sol = solve_ivp(rhs, (0, t_eval[-1]), state0[2:8], method="Radau", t_eval=t_eval, rtol=1e-10, atol=1e-12)
    eq1 = sol.y[0]
    final = state0[sgm.EQ1] * 1.05
    window = (t_eval > 0.5) & (t_eval < 2 * p.T_d01)
    slope = np.polyfit(t_eval[window], np.log(np.abs(final - eq1[window])), 1)[0]
    assert -1.0 / slope == pytest.approx(p.T_d01, rel=0.05)
