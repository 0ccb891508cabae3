"""Fixed-step time-domain simulation of the DAE with 3-stage Radau IIA collocation.

Each step solves the stacked stage equations

    X_i = x_n + dt * sum_j a_ij f(X_j, Z_j),   0 = g(X_i, Z_i),   i = 1..3

by simplified Newton with an LU factorization that is reused across steps and
refreshed when convergence slows down. The method is stiffly accurate, so the
last stage is the new point.
"""
from dataclasses import dataclass, field
import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigError, InitializationError, StepFailure, ValidationError

METHOD = "radau-iia-3"
METHOD_ORDER = 5

_S6 = math.sqrt(6.0)
RADAU_A = np.array([
    [(88 - 7 * _S6) / 360, (296 - 169 * _S6) / 1800, (-2 + 3 * _S6) / 225],
    [(296 + 169 * _S6) / 1800, (88 + 7 * _S6) / 360, (-2 - 3 * _S6) / 225],
    [(16 - _S6) / 36, (16 + _S6) / 36, 1 / 9],
])
RADAU_C = np.array([(4 - _S6) / 10, (4 + _S6) / 10, 1.0])

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class Event:
    time: float
    target: str
    delta_p: float = 0.0
    delta_q: float = 0.0


@dataclass(frozen=True)
class Scenario:
    t_end: float
    dt: float = 1e-4
    events: tuple = ()
    record: tuple = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be > 0")
        if not self.t_end > 0:
            raise ValidationError("t_end must be > 0")
        for ev in self.events:
            if not 0 <= ev.time <= self.t_end:
                raise ValidationError(f"event time {ev.time} outside [0, {self.t_end}]")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"t_end", "dt", "events", "record", "description"}
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        try:
            events = tuple(Event(time=float(e["time"]), target=str(e["target"]),
                                 delta_p=float(e.get("delta_p", 0.0)), delta_q=float(e.get("delta_q", 0.0)))
                           for e in data.get("events", []))
            return cls(t_end=float(data["t_end"]), dt=float(data.get("dt", 1e-4)), events=events,
                       record=tuple(data.get("record", ())))
        except KeyError as exc:
            raise ConfigError(f"scenario is missing {exc}") from None

    def to_dict(self):
        return {"t_end": self.t_end, "dt": self.dt, "record": list(self.record),
                "events": [{"time": e.time, "target": e.target, "delta_p": e.delta_p,
                            "delta_q": e.delta_q} for e in self.events]}

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_scenario(path):
    try:
        return Scenario.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


@dataclass
class TimeSeries:
    time: np.ndarray
    columns: tuple
    data: np.ndarray  # (n_steps + 1, n_columns)
    metadata: dict = field(default_factory=dict)
    diverged: bool = False
    final_x: np.ndarray | None = None
    final_z: np.ndarray | None = None

    def __getitem__(self, name):
        return self.data[:, self.columns.index(name)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            for key in sorted(self.metadata):
                fh.write(f"# {key}={self.metadata[key]}\n")
            w = csv.writer(fh)
            w.writerow(("time",) + tuple(self.columns))
            for t, row in zip(self.time, self.data):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def equilibrium_digest(eq):
    h = hashlib.sha256()
    for a in (eq.x0, eq.z0, eq.u0):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


def _selectors(system, record):
    names = system.x_labels + system.z_labels
    if not record:
        return tuple(names), np.arange(len(names))
    idx = []
    for sel in record:
        if sel not in names:
            raise ValidationError(f"unknown signal {sel!r}")
        idx.append(names.index(sel))
    return tuple(record), np.array(idx, dtype=int)


class RadauStepper:
    """Simplified-Newton Radau IIA stepper for one system and input vector."""

    def __init__(self, system, dt, u, tol=1e-10, max_iter=20):
        self.sys = system
        self.dt = dt
        self.u = np.asarray(u, dtype=float)
        self.tol = tol
        self.max_iter = max_iter
        self.lu = None
        self.n_x, self.n_z = system.n_x, system.n_z

    def set_inputs(self, u):
        self.u = np.asarray(u, dtype=float)
        self.lu = None

    def factor(self, x, z):
        jac = self.sys.jacobian(x, z, self.u)
        nx = self.n_x
        fx, fz, gx, gz = jac[:nx, :nx], jac[:nx, nx:], jac[nx:, :nx], jac[nx:, nx:]
        a = RADAU_A * self.dt
        eye3 = np.eye(3)
        m = np.block([
            [np.eye(3 * nx) - np.kron(a, fx), -np.kron(a, fz)],
            [np.kron(eye3, gx), np.kron(eye3, gz)],
        ])
        self.lu = scipy.linalg.lu_factor(m, check_finite=False)

    def residual(self, x, X, Z):
        F, G = self.sys.evaluate(X, Z, self.u[:, None])
        rx = X - x[:, None] - self.dt * F @ RADAU_A.T
        return np.concatenate([rx.T.ravel(), G.T.ravel()])

    def _unpack(self, w):
        nx, nz = self.n_x, self.n_z
        X = w[:3 * nx].reshape(3, nx).T
        Z = w[3 * nx:].reshape(3, nz).T
        return X, Z

    def step(self, x, z, guess=None):
        """Advance one step; returns (x_new, z_new, X, Z)."""
        if guess is None:
            X = np.repeat(x[:, None], 3, axis=1)
            Z = np.repeat(z[:, None], 3, axis=1)
        else:
            X, Z = guess
        w = np.concatenate([X.T.ravel(), Z.T.ravel()])
        for attempt in range(2):
            if self.lu is None:
                self.factor(x, z)
            r = self.residual(x, *self._unpack(w))
            norm = np.max(np.abs(r))
            prev = np.inf
            for it in range(self.max_iter + 1):
                if not np.isfinite(norm):
                    break
                if norm < self.tol:
                    X, Z = self._unpack(w)
                    if it > 4:
                        self.lu = None  # slow: refresh next step
                    return X[:, -1].copy(), Z[:, -1].copy(), X, Z
                if it == self.max_iter or (it > 2 and norm > 0.9 * prev):
                    break
                w = w - scipy.linalg.lu_solve(self.lu, r, check_finite=False)
                r = self.residual(x, *self._unpack(w))
                prev, norm = norm, np.max(np.abs(r))
            # refresh the Jacobian at the last accepted point and retry once
            self.lu = None
            w = np.concatenate([np.repeat(x[:, None], 3, axis=1).T.ravel(),
                                np.repeat(z[:, None], 3, axis=1).T.ravel()])
        raise StepFailure(f"Newton iteration did not reach {self.tol:.0e} (residual {norm:.2e})")


def solve_algebraic(system, x, z, u, tol=1e-12, max_iter=20):
    """Newton on g(x, z, u) = 0 for z at fixed x."""
    z = np.array(z, dtype=float)
    nx = system.n_x
    for _ in range(max_iter):
        r = system.g(x, z, u)
        if np.max(np.abs(r)) < tol:
            return z
        jac = system.jacobian(x, z, u)[nx:, nx:]
        z = z - np.linalg.solve(jac, r)
    r = system.g(x, z, u)
    if np.max(np.abs(r)) < tol:
        return z
    raise StepFailure(f"algebraic re-solve failed (residual {np.max(np.abs(r)):.2e})")


def event_inputs(system, x, u, event):
    """Input vector after a load event sized at the present bus voltage."""
    k = system.network.bus_index(event.target)
    vd, vq = system.node_voltage(x, k)
    v2 = float(vd * vd + vq * vq)
    u = np.array(u, dtype=float)
    u[system.bus_u0 + 2 * k] += event.delta_p / v2
    u[system.bus_u0 + 2 * k + 1] += -event.delta_q / v2
    return u


def simulate(system, eq, scenario, x_init=None, newton_tol=1e-10, check_initial=True):
    """Integrate from the equilibrium (or ``x_init``) over ``scenario``.

    Divergence (state norm above 1e6 or a failed step after the first one)
    truncates the series and sets ``diverged``.
    """
    dt = scenario.dt
    n_steps = int(round(scenario.t_end / dt))
    x = np.array(eq.x0 if x_init is None else x_init, dtype=float)
    z = np.array(eq.z0, dtype=float)
    u = np.array(eq.u0, dtype=float)
    if x_init is not None:
        z = solve_algebraic(system, x, z, u)
    if check_initial:
        g0 = np.max(np.abs(system.g(x, z, u)))
        f0 = np.max(np.abs(system.f(x, z, u))) if x_init is None else 0.0
        if not max(g0, f0) < 1e-8:
            raise InitializationError(f"initial point violates the DAE (residual {max(g0, f0):.2e})")

    events = {}
    for ev in scenario.events:
        events.setdefault(int(round(ev.time / dt)), []).append(ev)

    columns, sel = _selectors(system, scenario.record)
    out = np.empty((n_steps + 1, sel.size))
    out[0] = np.concatenate([x, z])[sel]
    stepper = RadauStepper(system, dt, u, tol=newton_tol)
    diverged = False
    last = n_steps
    guess = None
    for n in range(n_steps):
        if n in events:
            for ev in events[n]:
                u = event_inputs(system, x, u, ev)
            z = solve_algebraic(system, x, z, u)
            stepper.set_inputs(u)
            guess = None
            out[n] = np.concatenate([x, z])[sel]
        try:
            x_new, z_new, X, Z = stepper.step(x, z, guess)
        except StepFailure as exc:
            if n == 0:
                raise StepFailure(str(exc), time=0.0) from None
            diverged, last = True, n
            break
        if not np.all(np.isfinite(x_new)) or np.max(np.abs(x_new)) > DIVERGENCE_NORM:
            diverged, last = True, n
            break
        guess = _extrapolate(x, X, z, Z)
        x, z = x_new, z_new
        out[n + 1] = np.concatenate([x, z])[sel]
    meta = {
        "method": METHOD,
        "dt": repr(dt),
        "scenario": scenario.digest(),
        "equilibrium": equilibrium_digest(eq),
        "diverged": str(diverged).lower(),
    }
    return TimeSeries(np.arange(last + 1) * dt, columns, out[:last + 1], meta, diverged, x, z)


def _extrapolate(x, X, z, Z):
    """Stage guess for the next step from the current collocation polynomial."""
    # polynomial through (0, x), (c_i, X_i) evaluated at 1 + c_i
    nodes = np.concatenate([[0.0], RADAU_C])
    targets = 1.0 + RADAU_C
    lag = np.ones((4, 3))
    for j in range(4):
        for m in range(4):
            if m != j:
                lag[j] *= (targets - nodes[m]) / (nodes[j] - nodes[m])
    Xn = np.column_stack([x, X]) @ lag
    Zn = np.column_stack([z, Z]) @ lag
    return Xn, Zn


def convergence_check(system, eq, scenario=None, kick=1e-3, window=0.02, dt=1e-4, seed=0):
    """Empirical order of the integrator from runs at dt, dt/2 and dt/4.

    The differential state is kicked by a random perturbation of relative
    size ``kick`` and integrated over ``window`` seconds without events.
    Returns a dict with the error norms and the Richardson order estimate.
    """
    if scenario is not None:
        dt = scenario.dt
        window = min(window, scenario.t_end)
    rng = np.random.default_rng(seed)
    x_init = eq.x0 + kick * rng.standard_normal(eq.x0.size) * np.maximum(np.abs(eq.x0), 1.0)
    finals = []
    for h in (dt, dt / 2, dt / 4):
        sc = Scenario(t_end=window, dt=h, record=(system.x_labels[0],))
        ts = simulate(system, eq, sc, x_init=x_init, newton_tol=1e-13, check_initial=False)
        finals.append(np.concatenate([ts.final_x, ts.final_z]))
    e1 = np.max(np.abs(finals[0] - finals[1]))
    e2 = np.max(np.abs(finals[1] - finals[2]))
    order = math.log2(e1 / e2) if e2 > 0 and e1 > 0 else float("nan")
    return {"errors": (float(e1), float(e2)), "order": order, "nominal": METHOD_ORDER,
            "dt": dt, "window": window}
