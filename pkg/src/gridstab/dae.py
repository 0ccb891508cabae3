"""Global semi-explicit DAE  dx/dt = f(x, z, u),  0 = g(x, z, u).

Network quantities live in a common frame rotating at ``omega_g``, the frame
speed of the reference unit. Every unit carries the angle of its own frame
relative to that common frame; the reference unit's angle is identically zero
and is therefore not a state.

Differential states ``x`` (in order):
    unit states (unit pu, unit frame), line currents, node voltages
Algebraic variables ``z``:
    omega_g, per-unit injection currents (system pu, network frame),
    per-bus (p, q, v, delta)
Inputs ``u``:
    unit setpoints (converter: p, q, v, omega; generator: p_ref, v_ref),
    then an extra shunt (g, b) per bus used for load events.

All evaluation functions take arrays with the variable index first and any
number of trailing batch axes, and accept complex input so that Jacobians can
be taken by complex-step differentiation.
"""
from dataclasses import dataclass
import math

import numpy as np

from .components import SG
from .components import converter as conv
from .components import synchronous as sync
from .components.frames import rotate
from .errors import DifferentiationError

ANGLE_STATES = ("theta_c", "theta_s", "delta")
CS_STEP = 1e-30


@dataclass(frozen=True)
class _UnitSlot:
    index: int
    id: str
    kind: str
    params: object
    bus: int
    scale: float
    is_ref: bool
    x0: int
    nx: int
    u0: int
    nu: int
    offset: float  # frame angle = anchor state + offset


class PowerSystem:
    """Index bookkeeping plus residual functions for one network."""

    def __init__(self, network):
        self.network = network
        self.omega_b = network.base.omega_b
        nb = len(network.buses)
        self.n_bus = nb
        self.n_line = len(network.lines)

        slots = []
        x_labels, u_labels = [], []
        xo = uo = 0
        for k, unit in enumerate(network.units):
            names = list(sync.SG_STATES if unit.kind == SG else conv.state_names(unit.kind))
            is_ref = unit.id == network.reference_unit
            if is_ref:
                names = names[1:]
            unames = ["p_ref", "v_ref"] if unit.kind == SG else ["p", "q", "v", "omega"]
            slots.append(_UnitSlot(
                index=k, id=unit.id, kind=unit.kind, params=unit.params,
                bus=network.bus_index(unit.bus), scale=network.unit_scale(unit),
                is_ref=is_ref, x0=xo, nx=len(names), u0=uo, nu=len(unames),
                offset=-math.pi / 2 if unit.kind == SG else 0.0,
            ))
            x_labels += [f"{unit.id}.{n}" for n in names]
            u_labels += [f"{unit.id}.{n}" for n in unames]
            xo += len(names)
            uo += len(unames)
        self.units = tuple(slots)
        self.ref = next(s for s in slots if s.is_ref)

        self.line_x0 = xo
        for ln in network.lines:
            x_labels += [f"line[{ln.id}].i_d", f"line[{ln.id}].i_q"]
        self.node_x0 = xo + 2 * self.n_line
        for b in network.buses:
            x_labels += [f"bus[{b.id}].v_d", f"bus[{b.id}].v_q"]
        self.bus_u0 = uo
        for b in network.buses:
            u_labels += [f"bus[{b.id}].g_event", f"bus[{b.id}].b_event"]

        z_labels = ["omega_g"]
        for s in slots:
            z_labels += [f"{s.id}.i_n_d", f"{s.id}.i_n_q"]
        self.bus_z0 = len(z_labels)
        for b in network.buses:
            z_labels += [f"bus[{b.id}].{n}" for n in ("p", "q", "v", "delta")]

        self.x_labels = tuple(x_labels)
        self.z_labels = tuple(z_labels)
        self.u_labels = tuple(u_labels)
        self.n_x, self.n_z, self.n_u = len(x_labels), len(z_labels), len(u_labels)

        # constant network data
        self.incidence = network.incidence()
        self.line_r = np.array([ln.r for ln in network.lines])
        self.line_l = np.array([ln.l for ln in network.lines])
        self.line_from = np.array([network.bus_index(ln.from_bus) for ln in network.lines], dtype=int)
        self.line_to = np.array([network.bus_index(ln.to_bus) for ln in network.lines], dtype=int)
        g_sh, c_sh = network.nodal_shunts()
        g_ld, b_ld = network.load_admittances()
        self.load_g, self.load_b = g_ld, b_ld
        self.node_g = g_sh + g_ld
        self.node_b = b_ld
        self.node_c = c_sh
        self.unit_of_bus = {s.bus: s for s in slots}
        self._unit_bus = np.array([s.bus for s in slots], dtype=int)

    # ---- layout helpers -------------------------------------------------
    def x_index(self, label):
        return self.x_labels.index(label)

    def z_index(self, label):
        return self.z_labels.index(label)

    def u_index(self, label):
        return self.u_labels.index(label)

    def angle_mask(self):
        return np.array([lab.rsplit(".", 1)[-1] in ANGLE_STATES for lab in self.x_labels])

    def unit_state(self, slot, x):
        s = x[slot.x0:slot.x0 + slot.nx]
        if slot.is_ref:
            s = np.concatenate([np.zeros_like(s[:1]), s], axis=0)
        return s

    def node_voltage(self, x, b):
        k = self.node_x0 + 2 * b
        return x[k], x[k + 1]

    # ---- unit-level evaluation -----------------------------------------
    def _unit_eval(self, slot, x, z, u):
        """(rhs rows, reference frequency, injection current in network frame)."""
        state = self.unit_state(slot, x)
        setpoint = u[slot.u0:slot.u0 + slot.nu]
        omega_g = z[0]
        phi = state[0] + slot.offset
        vd, vq = self.node_voltage(x, slot.bus)
        v_local = rotate(vd, vq, -phi)
        if slot.kind == SG:
            rows = sync.sg_rhs(slot.params, setpoint, state, v_local, omega_g)
            omega = state[sync.OMEGA]
            i_local = sync.stator_current(slot.params, state)
        else:
            rows = conv.converter_rhs(slot.params, setpoint, state, slot.kind, v_local, omega_g)
            omega, _, _ = conv.converter_frequency(slot.params, setpoint[3], state, slot.kind)
            i_local = (state[conv.I_G], state[conv.I_G + 1])
        i_n = rotate(i_local[0], i_local[1], phi)
        if slot.is_ref:
            rows = rows[1:]
        return rows, omega, (slot.scale * i_n[0], slot.scale * i_n[1])

    def _bus_shunt(self, u):
        g = self.node_g.reshape((-1,) + (1,) * (u.ndim - 1)) + u[self.bus_u0::2]
        b = self.node_b.reshape((-1,) + (1,) * (u.ndim - 1)) + u[self.bus_u0 + 1::2]
        return g, b

    def _split(self, x, z, u):
        x = np.asarray(x)
        z = np.asarray(z)
        u = np.asarray(u)
        batch = np.broadcast_shapes(x.shape[1:], z.shape[1:], u.shape[1:])
        dtype = np.result_type(x, z, u, float)
        nb = len(batch)
        x, z, u = (a.reshape(a.shape[:1] + (1,) * (nb + 1 - a.ndim) + a.shape[1:]) for a in (x, z, u))
        return x, z, u, batch, dtype

    # ---- residuals --------------------------------------------------------
    def evaluate(self, x, z, u):
        """Both residuals ``(f, g)`` in one pass over the units."""
        x, z, u, batch, dtype = self._split(x, z, u)
        fo = np.empty((self.n_x,) + batch, dtype=dtype)
        go = np.empty((self.n_z,) + batch, dtype=dtype)
        wb = self.omega_b
        omega_g = z[0]
        inj = z[1:self.bus_z0]
        for s in self.units:
            rows, omega, i_n = self._unit_eval(s, x, z, u)
            fo[s.x0:s.x0 + s.nx] = rows
            if s.is_ref:
                go[0] = omega_g - omega
            go[1 + 2 * s.index] = inj[2 * s.index] - i_n[0]
            go[2 + 2 * s.index] = inj[2 * s.index + 1] - i_n[1]

        v = x[self.node_x0:self.node_x0 + 2 * self.n_bus]
        vd, vq = v[0::2], v[1::2]
        il = x[self.line_x0:self.line_x0 + 2 * self.n_line]
        id_, iq = il[0::2], il[1::2]
        ex = (slice(None),) + (None,) * len(batch)

        r, l = self.line_r[ex], self.line_l[ex]
        dvd = vd[self.line_from] - vd[self.line_to]
        dvq = vq[self.line_from] - vq[self.line_to]
        fo[self.line_x0:self.node_x0:2] = wb / l * (dvd - r * id_) + wb * omega_g * iq
        fo[self.line_x0 + 1:self.node_x0:2] = wb / l * (dvq - r * iq) - wb * omega_g * id_

        # unit injections scattered to their buses
        shape = (self.n_bus,) + batch
        ind = np.zeros(shape, dtype=dtype)
        inq = np.zeros(shape, dtype=dtype)
        ind[self._unit_bus] = inj[0::2]
        inq[self._unit_bus] = inj[1::2]

        # node current balance: injections + incoming - outgoing - shunt admittance
        g, b = self._bus_shunt(u)
        icd = ind + np.tensordot(self.incidence, id_, axes=1) - g * vd + b * vq
        icq = inq + np.tensordot(self.incidence, iq, axes=1) - g * vq - b * vd
        c = self.node_c[ex]
        fo[self.node_x0::2] = wb / c * icd + wb * omega_g * vq
        fo[self.node_x0 + 1::2] = wb / c * icq - wb * omega_g * vd

        # bus quantities: net injection is unit output minus load and event draw
        v2 = vd * vd + vq * vq
        p = vd * ind + vq * inq - (self.load_g[ex] + u[self.bus_u0::2]) * v2
        q = vq * ind - vd * inq + (self.load_b[ex] + u[self.bus_u0 + 1::2]) * v2
        zb = z[self.bus_z0:]
        go[self.bus_z0::4] = zb[0::4] - p
        go[self.bus_z0 + 1::4] = zb[1::4] - q
        go[self.bus_z0 + 2::4] = zb[2::4] - np.sqrt(v2)
        dl = zb[3::4]
        go[self.bus_z0 + 3::4] = vq * np.cos(dl) - vd * np.sin(dl)
        return fo, go

    def f(self, x, z, u):
        return self.evaluate(x, z, u)[0]

    def g(self, x, z, u):
        return self.evaluate(x, z, u)[1]

    def residual(self, x, z, u):
        return np.concatenate(self.evaluate(x, z, u))

    # ---- Jacobians ----------------------------------------------------------
    def jacobian(self, x, z, u, wrt="xz"):
        """Dense Jacobian of (f, g) by batched complex-step differentiation.

        ``wrt`` selects the columns: ``"xz"`` or ``"u"``.
        """
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        if wrt == "xz":
            n = self.n_x + self.n_z
            w = np.concatenate([x, z])[:, None] + 1j * CS_STEP * np.eye(n)
            res = self.residual(w[:self.n_x], w[self.n_x:], u[:, None])
        elif wrt == "u":
            n = self.n_u
            uu = u[:, None] + 1j * CS_STEP * np.eye(n)
            res = self.residual(x[:, None], z[:, None], uu)
        else:
            raise ValueError(f"unknown wrt {wrt!r}")
        return res.imag / CS_STEP

    def probe_jacobian(self, jac, x, z, u, rng, n_dirs=20, tol=1e-6):
        """Check ``jac`` against central differences on random directions.

        Returns the worst relative error; raises ``DifferentiationError`` if it
        exceeds ``tol``.
        """
        w0 = np.concatenate([np.asarray(x, float), np.asarray(z, float)])
        d = rng.standard_normal((w0.size, n_dirs))
        d /= np.linalg.norm(d, axis=0)
        h = 1e-6 * (1.0 + np.max(np.abs(w0)))
        wp = w0[:, None] + h * d
        wm = w0[:, None] - h * d
        both = np.concatenate([wp, wm], axis=1)
        res = self.residual(both[:self.n_x], both[self.n_x:], np.asarray(u, float)[:, None])
        fd = (res[:, :n_dirs] - res[:, n_dirs:]) / (2 * h)
        an = jac @ d
        scale = np.maximum(np.linalg.norm(an, axis=0), np.linalg.norm(fd, axis=0))
        scale = np.where(scale > 0, scale, 1.0)
        err = np.linalg.norm(fd - an, axis=0) / scale
        worst = float(err.max())
        if not worst < tol:
            raise DifferentiationError(
                f"Jacobian disagrees with finite differences: relative error {worst:.2e}")
        return worst

