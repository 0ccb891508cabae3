"""Round-rotor synchronous generator with stator dynamics, TGOV1 governor and
IEEE DC1A exciter.

Machine: two-axis subtransient model with dynamic stator flux (Sauer & Pai
form, generator convention). The step-up transformer is in series with the
stator, so it is merged into the machine: ``r_t`` adds to the stator
resistance and ``l_t`` to every reactance. The stator flux states are the
fluxes seen behind the transformer; the rotor states are unchanged.

Frames: (d, q) axes with the network phasor given by
``(v_d + j v_q) exp(j (delta - pi/2))``, i.e. the unit frame sits at
``delta - pi/2`` from the network frame.

State layout (13)::

    delta, omega, e_q1, psi_1d, e_d1, psi_2q, psi_d, psi_q,
    gov_x1, gov_x2, efd, rf, vr
"""
from dataclasses import dataclass, fields
import math

import numpy as np

from ..errors import ValidationError

SG_STATES = (
    "delta", "omega", "e_q1", "psi_1d", "e_d1", "psi_2q", "psi_d", "psi_q",
    "gov_x1", "gov_x2", "efd", "rf", "vr",
)
DELTA, OMEGA, EQ1, PSI1D, ED1, PSI2Q, PSID, PSIQ, GX1, GX2, EFD, RF, VR = range(13)


@dataclass(frozen=True)
class SGParams:
    r_s: float
    x_ls: float
    x_d: float
    x_q: float
    x_d1: float
    x_q1: float
    x_d2: float
    x_q2: float
    T_d01: float
    T_q01: float
    T_d02: float
    T_q02: float
    H: float
    D: float = 0.0
    r_t: float = 0.0
    l_t: float = 0.0
    gov_R: float = 0.05
    gov_T1: float = 0.5
    gov_T2: float = 1.0
    gov_T3: float = 3.0
    gov_Dt: float = 0.0
    exc_KA: float = 20.0
    exc_TA: float = 0.2
    exc_KE: float = 1.0
    exc_TE: float = 0.314
    exc_KF: float = 0.063
    exc_TF: float = 0.35
    exc_Ae: float = 0.0
    exc_Be: float = 0.0
    omega_b: float = 2 * math.pi * 50

    @classmethod
    def from_dict(cls, data, omega_b=None):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown generator parameter(s): {sorted(unknown)}")
        kwargs = dict(data)
        if omega_b is not None:
            kwargs["omega_b"] = omega_b
        try:
            params = cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(f"generator parameters: {exc}") from None
        params.validate()
        return params

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "omega_b"}

    def validate(self):
        for name in ("H", "T_d01", "T_q01", "T_d02", "T_q02", "gov_R", "gov_T1", "gov_T3",
                     "exc_KA", "exc_TA", "exc_TE", "exc_TF"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"generator parameter {name} must be > 0")
        for name in ("r_s", "r_t", "l_t", "D", "gov_T2", "gov_Dt", "exc_Ae"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"generator parameter {name} must be >= 0")
        if not (self.x_d > self.x_d1 > self.x_d2 > self.x_ls >= 0):
            raise ValidationError("generator reactances must satisfy x_d > x_d1 > x_d2 > x_ls >= 0")
        if not (self.x_q > self.x_q1 > self.x_q2 > self.x_ls):
            raise ValidationError("generator reactances must satisfy x_q > x_q1 > x_q2 > x_ls")

    def effective(self):
        """Machine constants with the transformer merged into the stator."""
        lt = self.l_t
        return _Effective(
            ra=self.r_s + self.r_t, xl=self.x_ls + lt,
            xd=self.x_d + lt, xq=self.x_q + lt,
            xd1=self.x_d1 + lt, xq1=self.x_q1 + lt,
            xd2=self.x_d2 + lt, xq2=self.x_q2 + lt,
        )


@dataclass(frozen=True)
class _Effective:
    ra: float
    xl: float
    xd: float
    xq: float
    xd1: float
    xq1: float
    xd2: float
    xq2: float


@dataclass(frozen=True)
class SGSetpoint:
    p_ref: float = 0.0
    v_ref: float = 1.0

    def as_array(self):
        return np.array([self.p_ref, self.v_ref])


def frame_angle(delta):
    """Angle of the machine (d, q) frame relative to the network frame."""
    return delta - math.pi / 2


def stator_current(params, state):
    """Stator (terminal) current (i_d, i_q) in the machine frame, generator convention."""
    e = params.effective()
    a1 = (e.xd2 - e.xl) / (e.xd1 - e.xl)
    a2 = (e.xd1 - e.xd2) / (e.xd1 - e.xl)
    b1 = (e.xq2 - e.xl) / (e.xq1 - e.xl)
    b2 = (e.xq1 - e.xq2) / (e.xq1 - e.xl)
    i_d = (a1 * state[EQ1] + a2 * state[PSI1D] - state[PSID]) / e.xd2
    i_q = (-b1 * state[ED1] + b2 * state[PSI2Q] - state[PSIQ]) / e.xq2
    return i_d, i_q


def machine_rhs(params, state, efd, tm, v_d, v_q, omega_g=0.0):
    """Electromechanical part (first 8 states) for given field voltage and torque."""
    e = params.effective()
    wb = params.omega_b
    i_d, i_q = stator_current(params, state)
    omega = state[OMEGA]
    eq1, psi1d, ed1, psi2q = state[EQ1], state[PSI1D], state[ED1], state[PSI2Q]
    psi_d, psi_q = state[PSID], state[PSIQ]

    t_e = psi_d * i_q - psi_q * i_d
    kd = (e.xd1 - e.xd2) / (e.xd1 - e.xl) ** 2
    kq = (e.xq1 - e.xq2) / (e.xq1 - e.xl) ** 2
    return [
        wb * (omega - omega_g),
        (tm - t_e - params.D * (omega - 1.0)) / (2 * params.H),
        (-eq1 - (e.xd - e.xd1) * (i_d - kd * (psi1d + (e.xd1 - e.xl) * i_d - eq1)) + efd) / params.T_d01,
        (-psi1d + eq1 - (e.xd1 - e.xl) * i_d) / params.T_d02,
        (-ed1 + (e.xq - e.xq1) * (i_q - kq * (psi2q + (e.xq1 - e.xl) * i_q + ed1))) / params.T_q01,
        (-psi2q - ed1 - (e.xq1 - e.xl) * i_q) / params.T_q02,
        wb * (e.ra * i_d + omega * psi_q + v_d),
        wb * (e.ra * i_q - omega * psi_d + v_q),
    ]


def _saturation(params, efd):
    return params.exc_Ae * np.exp(params.exc_Be * efd)


def sg_rhs(params, setpoint, state, v_grid_local, omega_g=0.0):
    """Time derivative of the 13-state generator model.

    ``v_grid_local`` is the bus voltage in the machine frame; the AVR
    regulates its magnitude. ``setpoint`` is an ``SGSetpoint`` or an array
    ``[p_ref, v_ref]``.
    """
    if isinstance(setpoint, SGSetpoint):
        setpoint = setpoint.as_array()
    p_ref, v_ref = setpoint[0], setpoint[1]
    v_d, v_q = v_grid_local[0], v_grid_local[1]
    dw = state[OMEGA] - 1.0

    # TGOV1 (limits omitted)
    x1, x2 = state[GX1], state[GX2]
    ratio = params.gov_T2 / params.gov_T3
    t_m = ratio * x1 + (1 - ratio) * x2 - params.gov_Dt * dw
    dx1 = (p_ref - dw / params.gov_R - x1) / params.gov_T1
    dx2 = (x1 - x2) / params.gov_T3

    # DC1A
    efd, rf, vr = state[EFD], state[RF], state[VR]
    v_mag = np.sqrt(v_d * v_d + v_q * v_q)
    kf_tf = params.exc_KF / params.exc_TF
    defd = (-(params.exc_KE + _saturation(params, efd)) * efd + vr) / params.exc_TE
    drf = (-rf + kf_tf * efd) / params.exc_TF
    dvr = (-vr + params.exc_KA * rf - params.exc_KA * kf_tf * efd
           + params.exc_KA * (v_ref - v_mag)) / params.exc_TA

    rows = machine_rhs(params, state, efd, t_m, v_d, v_q, omega_g)
    rows += [dx1, dx2, defd, drf, dvr]
    return np.stack(np.broadcast_arrays(*rows))


def init_sg(params, v_t, i_t, omega_0=1.0):
    """Steady-state back-solve; returns ``(state, setpoint)``.

    ``v_t``/``i_t`` are the bus voltage and injected current in an external
    frame (pu on the machine rating); ``state[DELTA]`` is measured from that
    frame.
    """
    e = params.effective()
    w = omega_0
    v = complex(v_t[0], v_t[1])
    i = complex(i_t[0], i_t[1])
    e_q = v + (e.ra + 1j * w * e.xq) * i
    delta = math.atan2(e_q.imag, e_q.real)
    rot = complex(math.cos(frame_angle(delta)), -math.sin(frame_angle(delta)))
    vl, il = v * rot, i * rot
    v_d, v_q, i_d, i_q = vl.real, vl.imag, il.real, il.imag

    psi_q = -(v_d + e.ra * i_d) / w
    psi_d = (v_q + e.ra * i_q) / w
    ed1 = (e.xq - e.xq1) * i_q
    psi2q = -ed1 - (e.xq1 - e.xl) * i_q
    eq1 = psi_d + e.xd1 * i_d
    psi1d = eq1 - (e.xd1 - e.xl) * i_d
    efd = eq1 + (e.xd - e.xd1) * i_d

    t_e = psi_d * i_q - psi_q * i_d
    t_m = t_e + params.D * (w - 1.0)
    dw = w - 1.0
    x1 = t_m + params.gov_Dt * dw
    p_ref = x1 + dw / params.gov_R

    rf = params.exc_KF / params.exc_TF * efd
    vr = (params.exc_KE + _saturation(params, efd)) * efd
    v_ref = abs(v) + vr / params.exc_KA

    state = np.array([delta, w, eq1, psi1d, ed1, psi2q, psi_d, psi_q, x1, x1, efd, rf, vr])
    return state, SGSetpoint(p_ref=p_ref, v_ref=v_ref)
