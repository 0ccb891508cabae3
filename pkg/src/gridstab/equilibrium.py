"""Power flow from dispatch decisions and DAE equilibrium assembly.

Dispatch values (p, q) are in pu on each unit's own rating and follow the
injection convention: q > 0 supplies reactive power to the network.
"""
from dataclasses import dataclass, field, replace
import json
import math
from pathlib import Path

import numpy as np
import scipy.linalg

from .components import GFM, init_unit_state
from .dae import PowerSystem
from .errors import (
    ConfigError,
    InitializationError,
    PowerFlowDiverged,
    PreconditionError,
    SingularJacobian,
    ValidationError,
)

SLACK, PV, PQ = "slack", "PV", "PQ"
EQ_TOL = 1e-8


@dataclass(frozen=True)
class UnitDispatch:
    type: str
    p: float = 0.0
    q: float = 0.0
    v: float = 1.0

    def __post_init__(self):
        if self.type not in (SLACK, PV, PQ):
            raise ValidationError(f"unknown bus type {self.type!r}")
        if not all(math.isfinite(val) for val in (self.p, self.q, self.v)):
            raise ValidationError("scheduled dispatch values must be finite")
        if not self.v > 0:
            raise ValidationError("scheduled voltage must be > 0")


@dataclass(frozen=True)
class LinkedVar:
    """``target = a - c * source`` where both are ``"<unit>.<p|q|v>"``."""

    target: str
    source: str
    a: float = 0.0
    c: float = 1.0


@dataclass(frozen=True)
class DispatchSpec:
    units: dict
    linked: tuple = ()

    def __post_init__(self):
        slack = [k for k, d in self.units.items() if d.type == SLACK]
        if len(slack) != 1:
            raise ValidationError(f"dispatch needs exactly one slack unit, got {len(slack)}")

    @property
    def slack(self):
        return next(k for k, d in self.units.items() if d.type == SLACK)

    def get(self, path):
        unit, attr = _split_path(path)
        return getattr(self.units[unit], attr)

    def with_value(self, path, value):
        unit, attr = _split_path(path)
        if unit not in self.units:
            raise ValidationError(f"dispatch has no unit {unit!r}")
        d = self.units[unit]
        if attr == "q" and d.type == PV:
            d = replace(d, type=PQ)
        units = dict(self.units)
        units[unit] = replace(d, **{attr: float(value)})
        return replace(self, units=units)

    def with_type(self, unit, type_):
        units = dict(self.units)
        units[unit] = replace(units[unit], type=type_)
        return replace(self, units=units)

    def resolved(self):
        """Dispatch with all linked variables evaluated."""
        out = self
        for link in self.linked:
            out = out.with_value(link.target, link.a - link.c * out.get(link.source))
        return replace(out, linked=())

    def to_dict(self):
        return {
            "units": {k: {"type": d.type, "p": d.p, "q": d.q, "v": d.v} for k, d in self.units.items()},
            "linked": [{"target": l.target, "source": l.source, "a": l.a, "c": l.c} for l in self.linked],
        }


def _split_path(path):
    unit, _, attr = str(path).rpartition(".")
    if not unit or attr not in ("p", "q", "v"):
        raise ValidationError(f"bad dispatch variable {path!r} (expected '<unit>.p|q|v')")
    return unit, attr


def default_dispatch(network):
    """Largest GFM (ties: first listed) is slack; every other unit is PV at its setpoint."""
    gfm = [u for u in network.units if u.kind == GFM]
    pool = gfm or list(network.units)
    slack = max(pool, key=lambda u: u.rating_mva).id
    units = {}
    for u in network.units:
        sp = u.setpoint
        units[u.id] = UnitDispatch(SLACK if u.id == slack else PV, p=sp.p, q=sp.q, v=sp.v)
    return DispatchSpec(units)


def dispatch_from_dict(network, data):
    """Network defaults overridden by ``data``: {"slack": id, "units": {...}, "linked": [...]}."""
    base = default_dispatch(network)
    units = dict(base.units)
    known = {u.id for u in network.units}
    unknown_keys = set(data) - {"slack", "units", "linked", "description"}
    if unknown_keys:
        raise ConfigError(f"unknown dispatch keys {sorted(unknown_keys)}")
    if "slack" in data:
        if data["slack"] not in known:
            raise ValidationError(f"slack unit {data['slack']!r} does not exist")
        units = {k: replace(d, type=PV) if d.type == SLACK else d for k, d in units.items()}
        units[data["slack"]] = replace(units[data["slack"]], type=SLACK)
    for uid, entry in data.get("units", {}).items():
        if uid not in known:
            raise ValidationError(f"dispatch references unknown unit {uid!r}")
        d = units[uid]
        kw = {k: float(entry[k]) for k in ("p", "q", "v") if k in entry}
        if "type" in entry:
            kw["type"] = entry["type"]
        elif "q" in entry and d.type == PV:
            kw["type"] = PQ
        units[uid] = replace(d, **kw)
    links = tuple(LinkedVar(**link) for link in data.get("linked", []))
    spec = DispatchSpec(units, links)
    for link in links:
        spec.get(link.target), spec.get(link.source)
    return spec


def load_dispatch(network, path):
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"dispatch file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return dispatch_from_dict(network, data)


# --------------------------------------------------------------------------
# power flow


@dataclass
class BusSolution:
    """Converged power flow.

    ``v``/``theta`` per bus; ``p``/``q`` are the net injections into the
    network (unit output minus load draw, system pu); ``unit_p``/``unit_q``
    are unit outputs on the unit rating.
    """

    bus_ids: list
    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    unit_p: dict
    unit_q: dict
    iterations: int
    mismatch: float

    @property
    def voltage(self):
        return self.v * np.exp(1j * self.theta)

    def to_dict(self):
        return {
            "buses": [
                {"id": b, "v": float(self.v[k]), "theta": float(self.theta[k]),
                 "p": float(self.p[k]), "q": float(self.q[k])}
                for k, b in enumerate(self.bus_ids)
            ],
            "units": {u: {"p": self.unit_p[u], "q": self.unit_q[u]} for u in self.unit_p},
            "iterations": self.iterations,
            "mismatch": self.mismatch,
        }


@dataclass(frozen=True)
class PowerFlowOptions:
    tol: float = 1e-10
    max_iter: int = 50
    polish: int = 3


def _bus_types(network, dispatch):
    n = len(network.buses)
    types = np.full(n, PQ, dtype=object)
    p_sched = np.zeros(n)
    q_sched = np.zeros(n)
    v_sched = np.ones(n)
    for u in network.units:
        if u.id not in dispatch.units:
            raise ValidationError(f"dispatch has no entry for unit {u.id!r}")
        d = dispatch.units[u.id]
        k = network.bus_index(u.bus)
        s = network.unit_scale(u)
        types[k] = d.type
        p_sched[k] = d.p * s
        q_sched[k] = d.q * s
        v_sched[k] = d.v
    return types, p_sched, q_sched, v_sched


def solve_power_flow(network, dispatch=None, options=None, warm_start=None):
    """Polar Newton-Raphson with loads and pi-section shunts in the admittance matrix.

    ``warm_start`` is an earlier ``BusSolution`` (or ``None`` for a flat start).
    """
    options = options or PowerFlowOptions()
    dispatch = (dispatch or default_dispatch(network)).resolved()
    y = network.admittance_matrix()
    types, p_sched, q_sched, v_sched = _bus_types(network, dispatch)
    n = len(types)
    slack = np.flatnonzero(types == SLACK)
    pv = np.flatnonzero(types == PV)
    pq = np.flatnonzero(types == PQ)
    ang_idx = np.concatenate([pv, pq])
    mag_idx = pq

    if warm_start is not None:
        vm = warm_start.v.copy()
        va = warm_start.theta - warm_start.theta[slack[0]]
    else:
        vm = np.ones(n)
        va = np.zeros(n)
    vm[slack] = v_sched[slack]
    vm[pv] = v_sched[pv]
    va[slack] = 0.0
    s_sched = p_sched + 1j * q_sched

    def mismatch(vm, va):
        v = vm * np.exp(1j * va)
        s = v * np.conj(y @ v)
        ds = s - s_sched
        return v, np.concatenate([ds.real[ang_idx], ds.imag[mag_idx]])

    v, mis = mismatch(vm, va)
    norm = np.max(np.abs(mis)) if mis.size else 0.0
    it = 0
    extra = 0
    while True:
        if not np.isfinite(norm):
            raise PowerFlowDiverged("power flow produced non-finite values", norm, it)
        if norm < options.tol:
            if extra >= options.polish or norm < 1e-15:
                break
            extra += 1
        elif it >= options.max_iter:
            raise PowerFlowDiverged(
                f"power flow did not converge in {options.max_iter} iterations "
                f"(mismatch {norm:.3e})", norm, it)
        it += 1
        ibus = y @ v
        vn = v / np.abs(v)
        ds_dvm = np.diag(v) @ np.conj(y @ np.diag(vn)) + np.diag(np.conj(ibus) * vn)
        ds_dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - y @ np.diag(v))
        jac = np.block([
            [ds_dva.real[np.ix_(ang_idx, ang_idx)], ds_dvm.real[np.ix_(ang_idx, mag_idx)]],
            [ds_dva.imag[np.ix_(mag_idx, ang_idx)], ds_dvm.imag[np.ix_(mag_idx, mag_idx)]],
        ])
        try:
            lu = scipy.linalg.lu_factor(jac, check_finite=True)
        except (ValueError, np.linalg.LinAlgError):
            raise SingularJacobian(f"power-flow Jacobian not factorizable at iteration {it}", it) from None
        if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.max(np.abs(jac))):
            raise SingularJacobian(f"power-flow Jacobian is singular at iteration {it}", it)
        dx = scipy.linalg.lu_solve(lu, -mis)
        va[ang_idx] += dx[:len(ang_idx)]
        vm[mag_idx] += dx[len(ang_idx):]
        v, mis_new = mismatch(vm, va)
        new_norm = np.max(np.abs(mis_new)) if mis_new.size else 0.0
        if norm < options.tol and not new_norm < norm:
            # polishing stalled at round-off; keep the better iterate
            va[ang_idx] -= dx[:len(ang_idx)]
            vm[mag_idx] -= dx[len(ang_idx):]
            v, mis = mismatch(vm, va)
            break
        mis, norm = mis_new, new_norm
        if np.any(vm <= 0):
            raise PowerFlowDiverged("power flow reached a non-positive voltage magnitude", norm, it)

    ibus = y @ v
    s_unit = v * np.conj(ibus)
    gl, bl = network.load_admittances()
    v2 = np.abs(v) ** 2
    s_net = s_unit - (gl - 1j * bl) * v2
    unit_p, unit_q = {}, {}
    for u in network.units:
        k = network.bus_index(u.bus)
        sc = network.unit_scale(u)
        unit_p[u.id] = float(s_unit[k].real / sc)
        unit_q[u.id] = float(s_unit[k].imag / sc)
    return BusSolution(
        bus_ids=network.bus_ids, v=np.abs(v), theta=np.angle(v), p=s_net.real, q=s_net.imag,
        unit_p=unit_p, unit_q=unit_q, iterations=it,
        mismatch=float(np.max(np.abs(mis))) if mis.size else 0.0,
    )


def power_balance(network, sol):
    """(generation, load, losses) in system pu for a converged flow."""
    v = sol.voltage
    gen = sum(sol.unit_p[u.id] * network.unit_scale(u) for u in network.units)
    gl, _ = network.load_admittances()
    load = float(np.sum(gl * sol.v ** 2))
    losses = 0.0
    for ln in network.lines:
        k, m = network.bus_index(ln.from_bus), network.bus_index(ln.to_bus)
        i = (v[k] - v[m]) / ln.impedance
        losses += ln.r * abs(i) ** 2
    g_sh, _ = network.nodal_shunts()
    losses += float(np.sum(g_sh * sol.v ** 2))
    return gen, load, losses


# --------------------------------------------------------------------------
# equilibrium


@dataclass
class Equilibrium:
    network: object
    system: PowerSystem
    dispatch: DispatchSpec
    bus_solution: BusSolution
    x0: np.ndarray
    z0: np.ndarray
    u0: np.ndarray
    residual_norms: tuple = field(default=(0.0, 0.0))

    def residuals(self):
        f = self.system.f(self.x0, self.z0, self.u0)
        g = self.system.g(self.x0, self.z0, self.u0)
        return f, g

    def with_states(self, x0, z0):
        f = self.system.f(x0, z0, self.u0)
        g = self.system.g(x0, z0, self.u0)
        return replace(self, x0=x0, z0=z0,
                       residual_norms=(float(np.max(np.abs(f))), float(np.max(np.abs(g)))))

    def to_dict(self):
        return {
            "bus_solution": self.bus_solution.to_dict(),
            "residual_norms": {"f": self.residual_norms[0], "g": self.residual_norms[1]},
            "x": dict(zip(self.system.x_labels, map(float, self.x0))),
            "z": dict(zip(self.system.z_labels, map(float, self.z0))),
            "u": dict(zip(self.system.u_labels, map(float, self.u0))),
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def assemble_equilibrium(network, dispatch=None, pf=None, pf_options=None, warm_start=None,
                         system=None, tol=EQ_TOL):
    """Initialize every state of the DAE from a converged power flow.

    Unit setpoints are chosen so that the operating point is a steady state
    (the droop deviations vanish). The common frame is anchored to the
    reference unit, so its angle is zero.
    """
    dispatch = dispatch or default_dispatch(network)
    if pf is None:
        pf = solve_power_flow(network, dispatch, pf_options, warm_start)
    system = system or PowerSystem(network)
    v = pf.voltage
    y = network.admittance_matrix()
    inj = y @ v

    # frame anchor of every unit in the power-flow frame
    unit_states, setpoints, anchors = {}, {}, {}
    for u in network.units:
        k = network.bus_index(u.bus)
        sc = network.unit_scale(u)
        vt = np.array([v[k].real, v[k].imag])
        it = np.array([inj[k].real, inj[k].imag]) / sc
        state, sp = init_unit_state(u, vt, it, 1.0)
        unit_states[u.id], setpoints[u.id] = state, sp
        anchors[u.id] = state[0]
    a_ref = anchors[network.reference_unit]
    rot = np.exp(-1j * a_ref)

    x0 = np.zeros(system.n_x)
    z0 = np.zeros(system.n_z)
    u0 = np.zeros(system.n_u)
    z0[0] = 1.0
    for s in system.units:
        state = unit_states[s.id].copy()
        state[0] -= a_ref
        if s.kind == "GFL":
            state[14] -= a_ref
        x0[s.x0:s.x0 + s.nx] = state[1:] if s.is_ref else state
        sp = setpoints[s.id]
        u0[s.u0:s.u0 + s.nu] = sp.as_array()
        i_n = inj[s.bus] * rot
        z0[1 + 2 * s.index] = i_n.real
        z0[2 + 2 * s.index] = i_n.imag

    vr = v * rot
    for ln_k, ln in enumerate(network.lines):
        k, m = network.bus_index(ln.from_bus), network.bus_index(ln.to_bus)
        i = (vr[k] - vr[m]) / ln.impedance
        x0[system.line_x0 + 2 * ln_k] = i.real
        x0[system.line_x0 + 2 * ln_k + 1] = i.imag
    for k in range(system.n_bus):
        x0[system.node_x0 + 2 * k] = vr[k].real
        x0[system.node_x0 + 2 * k + 1] = vr[k].imag
        zb = system.bus_z0 + 4 * k
        z0[zb:zb + 4] = pf.p[k], pf.q[k], abs(vr[k]), np.angle(vr[k])

    f = system.f(x0, z0, u0)
    g = system.g(x0, z0, u0)
    norms = (float(np.max(np.abs(f))), float(np.max(np.abs(g))))
    eq = Equilibrium(network, system, dispatch, pf, x0, z0, u0, norms)
    if max(norms) >= tol:
        res = np.concatenate([f, g])
        labels = system.x_labels + system.z_labels
        worst = [(labels[i], float(res[i])) for i in np.argsort(-np.abs(res))[:5]]
        raise InitializationError(
            "initial point does not satisfy the DAE: "
            + ", ".join(f"{lab}={val:.2e}" for lab, val in worst), worst)
    return eq


def refine_equilibrium(eq, tol=1e-12, max_iter=20):
    """Newton polish of (f, g) = 0 over (x, z) with inputs held fixed."""
    sys_ = eq.system
    w = np.concatenate([eq.x0, eq.z0])
    nx = sys_.n_x

    def resid(w):
        return sys_.residual(w[:nx], w[nx:], eq.u0)

    r = resid(w)
    norm = np.max(np.abs(r))
    if norm < tol:
        return eq
    best = (norm, w)
    for it in range(1, max_iter + 1):
        jac = sys_.jacobian(w[:nx], w[nx:], eq.u0)
        try:
            lu = scipy.linalg.lu_factor(jac)
        except (ValueError, np.linalg.LinAlgError):
            raise SingularJacobian("combined Jacobian is singular", it) from None
        if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(jac)):
            raise SingularJacobian("combined Jacobian is singular", it)
        w = w - scipy.linalg.lu_solve(lu, r)
        r = resid(w)
        norm = np.max(np.abs(r))
        if not np.isfinite(norm):
            break
        if norm < best[0]:
            best = (norm, w)
        if norm < tol:
            return eq.with_states(w[:nx], w[nx:])
    raise PreconditionError(
        f"equilibrium refinement did not reach {tol:.0e} (best residual {best[0]:.2e})")
