"""Averaged voltage-source converter with cascaded control.

System-level control: power measurement, droop with low-pass filter, frame
generation, virtual impedance. Device-level control: voltage loop followed by
a current loop. Plant: RLC filter plus transformer, written in the converter
frame rotating at ``omega_c``. Grid-following units synchronize through an
SRF-PLL; grid-forming units run from a constant frequency reference.

All quantities are per-unit on the converter rating; time is in seconds.
"""
from dataclasses import dataclass, fields, replace
import math

import numpy as np

from ..errors import InfeasibleOperatingPoint, ValidationError
from .frames import active_power, converter_reactive_power, rotate

GFM = "GFM"
GFL = "GFL"

# PLL frequency feed-forward (pu).
OMEGA_NOMINAL = 1.0

GFM_STATES = (
    "theta_c", "omega_tilde", "v_tilde",
    "xi_d", "xi_q", "gamma_d", "gamma_q",
    "i_f_d", "i_f_q", "v_f_d", "v_f_q", "i_g_d", "i_g_q",
)
GFL_STATES = GFM_STATES + ("eps", "theta_s")

THETA_C, OMEGA_T, V_T = 0, 1, 2
XI, GAMMA, I_F, V_F, I_G = 3, 5, 7, 9, 11
EPS, THETA_S = 13, 14


def state_names(mode):
    return GFL_STATES if mode == GFL else GFM_STATES


@dataclass(frozen=True)
class ConverterParams:
    r_f: float
    l_f: float
    c_f: float
    r_t: float
    l_t: float
    r_v: float
    l_v: float
    R_p: float
    R_q: float
    omega_z: float
    K_P_v: float
    K_I_v: float
    K_P_i: float
    K_I_i: float
    K_F_v: float = 1.0
    K_F_i: float = 1.0
    K_P_s: float | None = None
    K_I_s: float | None = None
    omega_b: float = 2 * math.pi * 50
    v_sw_max: float | None = None

    @classmethod
    def from_dict(cls, data, mode, omega_b=None):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown converter parameter(s): {sorted(unknown)}")
        kwargs = dict(data)
        if omega_b is not None:
            kwargs["omega_b"] = omega_b
        try:
            params = cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(f"converter parameters: {exc}") from None
        params.validate(mode)
        return params

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None and f.name != "omega_b":
                out[f.name] = value
        return out

    def validate(self, mode):
        positive = ("l_f", "c_f", "l_t", "R_p", "omega_z", "K_P_v", "K_P_i", "omega_b")
        nonnegative = ("r_f", "r_t", "r_v", "l_v", "R_q", "K_I_v", "K_I_i")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"converter parameter {name} must be > 0")
        for name in nonnegative:
            if not getattr(self, name) >= 0:
                raise ValidationError(f"converter parameter {name} must be >= 0")
        for name in ("K_F_v", "K_F_i"):
            if getattr(self, name) not in (0, 1):
                raise ValidationError(f"converter parameter {name} must be 0 or 1")
        if mode == GFL:
            if self.K_P_s is None or not self.K_P_s > 0:
                raise ValidationError("GFL converter needs K_P_s > 0")
            if self.K_I_s is None or not self.K_I_s >= 0:
                raise ValidationError("GFL converter needs K_I_s >= 0")
        elif mode == GFM:
            if self.K_P_s is not None or self.K_I_s is not None:
                raise ValidationError("GFM converter has no PLL gains")
        else:
            raise ValidationError(f"unknown converter mode {mode!r}")

    def with_values(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class ConverterSetpoint:
    p: float = 0.0
    q: float = 0.0
    v: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if not self.v > 0:
            raise ValidationError("converter voltage setpoint must be > 0")

    def as_array(self):
        return np.array([self.p, self.q, self.v, self.omega])


def pll_output(params, state, v_f_q, omega_g=OMEGA_NOMINAL):
    """Synchronization frequency of the PLL."""
    return omega_g + params.K_P_s * v_f_q + params.K_I_s * state[EPS]


def filter_rhs(params, omega, v_sw, i_f, v_f, i_g, v_t):
    """RLC filter and transformer in a frame rotating at ``omega`` (pu).

    Each vector argument is a ``(d, q)`` pair. Returns the derivatives of
    ``i_f``, ``v_f`` and ``i_g`` as pairs.
    """
    wb = params.omega_b
    di_f = (
        wb / params.l_f * (v_sw[0] - v_f[0]) - wb * params.r_f / params.l_f * i_f[0] + wb * omega * i_f[1],
        wb / params.l_f * (v_sw[1] - v_f[1]) - wb * params.r_f / params.l_f * i_f[1] - wb * omega * i_f[0],
    )
    dv_f = (
        wb / params.c_f * (i_f[0] - i_g[0]) + wb * omega * v_f[1],
        wb / params.c_f * (i_f[1] - i_g[1]) - wb * omega * v_f[0],
    )
    di_g = (
        wb / params.l_t * (v_f[0] - v_t[0]) - wb * params.r_t / params.l_t * i_g[0] + wb * omega * i_g[1],
        wb / params.l_t * (v_f[1] - v_t[1]) - wb * params.r_t / params.l_t * i_g[1] - wb * omega * i_g[0],
    )
    return di_f, dv_f, di_g


def converter_frequency(params, omega_star, state, mode):
    """Frame speed omega_c, synchronization frequency omega_s and the PLL's v_f^q."""
    if mode == GFL:
        # v_f measured in the PLL frame
        _, vfq_s = rotate(state[V_F], state[V_F + 1], state[THETA_C] - state[THETA_S])
        omega_s = pll_output(params, state, vfq_s)
    else:
        omega_s = omega_star
        vfq_s = None
    return omega_s + state[OMEGA_T], omega_s, vfq_s


def converter_rhs(params, setpoint, state, mode, v_grid_local, omega_g=0.0):
    """Time derivative of the converter state.

    ``state`` has the layout of ``state_names(mode)`` with optional trailing
    batch axes; ``v_grid_local`` is the terminal voltage in the converter
    frame. Angle derivatives are taken relative to a frame rotating at
    ``omega_g`` (0 gives absolute angles). ``setpoint`` is a
    ``ConverterSetpoint`` or an array ``[p, q, v, omega]``.
    """
    if isinstance(setpoint, ConverterSetpoint):
        setpoint = setpoint.as_array()
    p_star, q_star, v_star = setpoint[0], setpoint[1], setpoint[2]
    x = state
    i_f = (x[I_F], x[I_F + 1])
    v_f = (x[V_F], x[V_F + 1])
    i_g = (x[I_G], x[I_G + 1])
    xi = (x[XI], x[XI + 1])
    gamma = (x[GAMMA], x[GAMMA + 1])
    omega_tilde, v_tilde = x[OMEGA_T], x[V_T]

    p_c = active_power(v_f[0], v_f[1], i_g[0], i_g[1])
    q_c = converter_reactive_power(v_f[0], v_f[1], i_g[0], i_g[1])

    omega_c, omega_s, vfq_s = converter_frequency(params, setpoint[3], x, mode)

    d_omega_tilde = -params.omega_z * omega_tilde + params.R_p * params.omega_z * (p_star - p_c)
    d_v_tilde = -params.omega_z * v_tilde + params.R_q * params.omega_z * (q_star - q_c)

    # virtual impedance: v_f* = v_c - r_v i_g - J omega_c l_v i_g, with v_c = (v* + v~, 0)
    vref_d = v_star + v_tilde - params.r_v * i_g[0] + omega_c * params.l_v * i_g[1]
    vref_q = -params.r_v * i_g[1] - omega_c * params.l_v * i_g[0]

    ev_d = vref_d - v_f[0]
    ev_q = vref_q - v_f[1]
    iref_d = params.K_P_v * ev_d + params.K_I_v * xi[0] + params.K_F_v * i_g[0] - omega_c * params.c_f * v_f[1]
    iref_q = params.K_P_v * ev_q + params.K_I_v * xi[1] + params.K_F_v * i_g[1] + omega_c * params.c_f * v_f[0]

    ei_d = iref_d - i_f[0]
    ei_q = iref_q - i_f[1]
    vsw_d = params.K_P_i * ei_d + params.K_I_i * gamma[0] + params.K_F_i * v_f[0] - omega_c * params.l_f * i_f[1]
    vsw_q = params.K_P_i * ei_q + params.K_I_i * gamma[1] + params.K_F_i * v_f[1] + omega_c * params.l_f * i_f[0]

    di_f, dv_f, di_g = filter_rhs(params, omega_c, (vsw_d, vsw_q), i_f, v_f, i_g,
                                  (v_grid_local[0], v_grid_local[1]))

    rows = [
        params.omega_b * (omega_c - omega_g),
        d_omega_tilde, d_v_tilde,
        ev_d, ev_q, ei_d, ei_q,
        di_f[0], di_f[1], dv_f[0], dv_f[1], di_g[0], di_g[1],
    ]
    if mode == GFL:
        rows += [vfq_s, params.omega_b * (omega_s - omega_g)]
    return np.stack(np.broadcast_arrays(*rows))


def converter_output(state):
    """Terminal current (i_g) in the converter frame and the frame angle."""
    return state[THETA_C], state[I_G], state[I_G + 1]


def init_converter(params, mode, v_t, i_t, omega_0=1.0, setpoint=None):
    """Steady-state back-solve at the given terminal point.

    ``v_t`` and ``i_t`` are 2-vectors in any external frame (pu on the
    converter rating, current leaving the converter). Returns
    ``(state, setpoint)`` where ``state[THETA_C]`` (and ``state[THETA_S]``)
    are angles relative to that external frame.

    With ``setpoint=None`` the power setpoints are taken equal to the measured
    powers so the droop states vanish; otherwise the given ``p``/``q`` are
    kept and the droop states absorb the difference.
    """
    w = omega_0
    vt = complex(v_t[0], v_t[1])
    ig = complex(i_t[0], i_t[1])
    vf = vt + (params.r_t + 1j * w * params.l_t) * ig
    i_f = ig + 1j * w * params.c_f * vf
    vsw = vf + (params.r_f + 1j * w * params.l_f) * i_f

    p_c = active_power(vf.real, vf.imag, ig.real, ig.imag)
    q_c = converter_reactive_power(vf.real, vf.imag, ig.real, ig.imag)
    if setpoint is None:
        p_star, q_star = p_c, q_c
    else:
        p_star, q_star = setpoint.p, setpoint.q
    omega_tilde = params.R_p * (p_star - p_c)
    v_tilde = params.R_q * (q_star - q_c)

    # tracking errors vanish at equilibrium, so v_f = v_f*
    vc = vf + (params.r_v + 1j * w * params.l_v) * ig
    theta_c = math.atan2(vc.imag, vc.real)
    v_cd = abs(vc)
    v_star = v_cd - v_tilde
    if not v_star > 0:
        raise InfeasibleOperatingPoint(f"voltage setpoint {v_star:.4g} is not positive")

    rot = complex(math.cos(theta_c), -math.sin(theta_c))
    vf_l, if_l, ig_l, vsw_l = vf * rot, i_f * rot, ig * rot, vsw * rot

    xi_target = if_l - params.K_F_v * ig_l - 1j * w * params.c_f * vf_l
    gamma_target = vsw_l - params.K_F_i * vf_l - 1j * w * params.l_f * if_l
    xi = _integrator_state(xi_target, params.K_I_v, "voltage")
    gamma = _integrator_state(gamma_target, params.K_I_i, "current")

    if params.v_sw_max is not None and abs(vsw) > params.v_sw_max:
        raise InfeasibleOperatingPoint(
            f"switching voltage {abs(vsw):.4f} pu exceeds limit {params.v_sw_max}")

    state = np.zeros(len(state_names(mode)))
    state[THETA_C] = theta_c
    state[OMEGA_T] = omega_tilde
    state[V_T] = v_tilde
    state[XI:XI + 2] = xi.real, xi.imag
    state[GAMMA:GAMMA + 2] = gamma.real, gamma.imag
    state[I_F:I_F + 2] = if_l.real, if_l.imag
    state[V_F:V_F + 2] = vf_l.real, vf_l.imag
    state[I_G:I_G + 2] = ig_l.real, ig_l.imag

    omega_s = w - omega_tilde
    if mode == GFL:
        if abs(omega_tilde) > 1e-12:
            # omega_c = omega_s + omega_tilde, so the PLL frame would drift against the grid
            raise InfeasibleOperatingPoint(
                f"GFL active power setpoint {p_star:.6g} differs from the measured power {p_c:.6g}")
        state[THETA_S] = math.atan2(vf.imag, vf.real)
        offset = omega_s - OMEGA_NOMINAL
        if params.K_I_s > 0:
            state[EPS] = offset / params.K_I_s
        elif abs(offset) > 1e-14:
            # the PLL q-voltage would have to carry the offset, but dε/dt = v_f^q
            raise InfeasibleOperatingPoint(
                "PLL without integral gain cannot hold a frequency offset")
        sp = ConverterSetpoint(p=p_star, q=q_star, v=v_star, omega=OMEGA_NOMINAL)
    else:
        sp = ConverterSetpoint(p=p_star, q=q_star, v=v_star, omega=omega_s)
    return state, sp


def _integrator_state(target, gain, loop):
    if gain > 0:
        return target / gain
    if abs(target) > 1e-12:
        raise InfeasibleOperatingPoint(
            f"{loop} loop has no integral action but needs a steady-state offset of {abs(target):.3g}")
    return 0j
