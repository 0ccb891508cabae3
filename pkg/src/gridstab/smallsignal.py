"""Linearization, Schur reduction, modal analysis and stability verdicts."""
from dataclasses import dataclass, field
import csv
import math

import numpy as np
import scipy.linalg

from .errors import DAEIndexError, EigenSolverError, PreconditionError

STABLE, UNSTABLE, MARGINAL = "Stable", "Unstable", "Marginal"
DEFAULT_MARGIN = 1e-6
ZERO_MODE_TOL = 1e-8
MAX_COND = 1e12
LINEARIZE_MAX_RESIDUAL = 1e-6


@dataclass
class LinearModel:
    A_xx: np.ndarray
    A_xz: np.ndarray
    A_zx: np.ndarray
    A_zz: np.ndarray
    state_labels: tuple
    B_x: np.ndarray | None = None
    B_z: np.ndarray | None = None
    probe_error: float | None = None
    A_tilde: np.ndarray | None = None
    cond_A_zz: float | None = None

    @property
    def n_x(self):
        return self.A_xx.shape[0]

    @classmethod
    def from_blocks(cls, A_xx, A_xz, A_zx, A_zz, labels=None):
        A_xx, A_xz, A_zx, A_zz = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A_xx, A_xz, A_zx, A_zz))
        n = A_xx.shape[0]
        if A_xx.shape != (n, n) or A_zz.shape[0] != A_zz.shape[1]:
            raise ValueError("inconsistent Jacobian block shapes")
        if A_xz.shape != (n, A_zz.shape[0]) or A_zx.shape != (A_zz.shape[0], n):
            raise ValueError("inconsistent Jacobian block shapes")
        labels = tuple(labels) if labels is not None else tuple(f"x{i}" for i in range(n))
        return cls(A_xx, A_xz, A_zx, A_zz, labels)


def linearize(system, eq, rng=None, probe=True, n_dirs=20, with_inputs=False):
    """Jacobian blocks of (f, g) at the equilibrium, complex-step differentiated.

    Unless ``probe`` is false the result is checked against central
    differences along ``n_dirs`` random directions.
    """
    f, g = system.f(eq.x0, eq.z0, eq.u0), system.g(eq.x0, eq.z0, eq.u0)
    res = max(np.max(np.abs(f)), np.max(np.abs(g)))
    if not res < LINEARIZE_MAX_RESIDUAL:
        raise PreconditionError(f"point is not an equilibrium (residual {res:.2e})")
    jac = system.jacobian(eq.x0, eq.z0, eq.u0)
    nx = system.n_x
    lm = LinearModel(jac[:nx, :nx], jac[:nx, nx:], jac[nx:, :nx], jac[nx:, nx:], system.x_labels)
    if probe:
        rng = rng if rng is not None else np.random.default_rng(0)
        lm.probe_error = system.probe_jacobian(jac, eq.x0, eq.z0, eq.u0, rng, n_dirs)
    if with_inputs:
        b = system.jacobian(eq.x0, eq.z0, eq.u0, wrt="u")
        lm.B_x, lm.B_z = b[:nx], b[nx:]
    return lm


def _factor_azz(lm):
    if lm.A_zz.size == 0:
        return None
    cond = np.linalg.cond(lm.A_zz)
    lm.cond_A_zz = float(cond)
    if not cond <= MAX_COND:
        raise DAEIndexError(f"algebraic Jacobian is singular or ill-conditioned (cond = {cond:.3e})")
    return scipy.linalg.lu_factor(lm.A_zz)


def reduce_to_ode(lm):
    """A_xx - A_xz A_zz^{-1} A_zx through an LU solve."""
    lu = _factor_azz(lm)
    if lu is None:
        lm.A_tilde = lm.A_xx.copy()
    else:
        lm.A_tilde = lm.A_xx - lm.A_xz @ scipy.linalg.lu_solve(lu, lm.A_zx)
    return lm.A_tilde


def reduce_inputs(lm):
    """Reduced input matrix B_x - A_xz A_zz^{-1} B_z."""
    lu = _factor_azz(lm)
    if lu is None:
        return lm.B_x.copy()
    return lm.B_x - lm.A_xz @ scipy.linalg.lu_solve(lu, lm.B_z)


@dataclass
class ModalAnalysis:
    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    participation: np.ndarray
    labels: tuple
    zero_modes: tuple = ()
    residuals: np.ndarray = field(default=None)

    @property
    def retained(self):
        keep = np.ones(self.eigenvalues.size, dtype=bool)
        keep[list(self.zero_modes)] = False
        return np.flatnonzero(keep)

    @property
    def dominant(self):
        idx = self.retained
        if idx.size == 0:
            return None
        return int(idx[np.argmax(self.eigenvalues.real[idx])])

    def top_states(self, mode, k=5):
        col = self.participation[:, mode]
        order = np.argsort(-col, kind="stable")[:k]
        return [(self.labels[i], float(col[i])) for i in order]


def eigen_analysis(A_tilde, labels=None, angle_mask=None, keep_zero_mode=False):
    """Full nonsymmetric eigendecomposition with participation factors.

    Near-zero eigenvalues whose participation lies almost entirely in angle
    states (``angle_mask``) are reported as zero modes unless
    ``keep_zero_mode`` is set.
    """
    A = np.asarray(A_tilde, dtype=float)
    if not np.all(np.isfinite(A)):
        raise EigenSolverError("state matrix has non-finite entries")
    n = A.shape[0]
    labels = tuple(labels) if labels is not None else tuple(f"x{i}" for i in range(n))
    try:
        lam, vl, vr = scipy.linalg.eig(A, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"eigenvalue solver failed: {exc}") from None
    # sort by decreasing real part, then imaginary part, for a stable ordering
    order = np.lexsort((-lam.imag, -lam.real))
    lam, vl, vr = lam[order], vl[:, order], vr[:, order]

    norm_a = max(np.linalg.norm(A, 2), 1e-300)
    resid = np.linalg.norm(A @ vr - vr * lam, axis=0) / np.linalg.norm(vr, axis=0)
    if np.any(resid > 1e-8 * norm_a):
        raise EigenSolverError(f"eigenpair residual {resid.max():.2e} too large")

    p = np.abs(vr * vl.conj())
    colmax = p.max(axis=0)
    p = p / np.where(colmax > 0, colmax, 1.0)

    zero = []
    if angle_mask is not None and not keep_zero_mode:
        mask = np.asarray(angle_mask, dtype=bool)
        for i in np.flatnonzero(np.abs(lam) < ZERO_MODE_TOL):
            mass = p[:, i].sum()
            if mass > 0 and p[mask, i].sum() / mass > 0.99:
                zero.append(int(i))
    return ModalAnalysis(lam, vr, vl, p, labels, tuple(zero), resid)


@dataclass
class StabilityReport:
    verdict: str
    dominant: complex | None
    freq_hz: float
    damping: float
    top_states: list
    zero_modes: int = 0

    @property
    def top_state(self):
        return self.top_states[0][0] if self.top_states else ""


def damping_ratio(lam):
    mag = abs(lam)
    return -lam.real / mag if mag > 0 else 1.0


def classify_stability(ma, margin=DEFAULT_MARGIN):
    dom = ma.dominant
    if dom is None:
        return StabilityReport(STABLE, None, 0.0, 1.0, [], len(ma.zero_modes))
    lam = complex(ma.eigenvalues[dom])
    if lam.real < -margin:
        verdict = STABLE
    elif lam.real > margin:
        verdict = UNSTABLE
    else:
        verdict = MARGINAL
    return StabilityReport(verdict, lam, abs(lam.imag) / (2 * math.pi), damping_ratio(lam),
                           ma.top_states(dom), len(ma.zero_modes))


def analyze(system, eq, rng=None, margin=DEFAULT_MARGIN, keep_zero_mode=False, probe=True):
    """linearize -> reduce -> eigen_analysis -> classify."""
    lm = linearize(system, eq, rng=rng, probe=probe)
    reduce_to_ode(lm)
    ma = eigen_analysis(lm.A_tilde, system.x_labels, system.angle_mask(), keep_zero_mode)
    return lm, ma, classify_stability(ma, margin)


def write_modes_csv(ma, path, top=5):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["mode_id", "re", "im", "freq_hz", "damping", "zero_mode"]
        for k in range(top):
            header += [f"state_{k + 1}", f"factor_{k + 1}"]
        w.writerow(header)
        for i, lam in enumerate(ma.eigenvalues):
            row = [i, repr(float(lam.real)), repr(float(lam.imag)),
                   repr(abs(lam.imag) / (2 * math.pi)), repr(damping_ratio(complex(lam))),
                   int(i in ma.zero_modes)]
            for name, val in ma.top_states(i, top):
                row += [name, repr(val)]
            w.writerow(row)
