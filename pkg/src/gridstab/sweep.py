"""Dispatch and parameter sweeps over a grid of operating points.

The innermost axis forms a warm-start chain: each point's power flow starts
from its neighbour's solution. Chains are independent and are the unit of
parallel work; records are merged by grid index, so results do not depend on
the worker count.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
import csv
import hashlib
import io
import itertools
import json
import math
import os
from pathlib import Path
import warnings

import numpy as np
from threadpoolctl import threadpool_limits

from .equilibrium import (
    LinkedVar,
    assemble_equilibrium,
    dispatch_from_dict,
    solve_power_flow,
)
from .errors import (
    ConfigError,
    InfeasibleOperatingPoint,
    InitializationError,
    PowerFlowDiverged,
    SingularJacobian,
    ValidationError,
)
from .smallsignal import DEFAULT_MARGIN, analyze

PF_INFEASIBLE = "PF-infeasible"
DISPATCH_ATTRS = ("p", "q", "v")
THREADS_ENV = "GRIDSTAB_THREADS"


@dataclass(frozen=True)
class Axis:
    path: str
    min: float
    max: float
    steps: int

    def __post_init__(self):
        if not self.min < self.max:
            raise ValidationError(f"axis {self.path}: need min < max")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ValidationError(f"axis {self.path}: need an integer steps >= 2")

    @property
    def unit(self):
        return self.path.rpartition(".")[0]

    @property
    def attr(self):
        return self.path.rpartition(".")[2]

    @property
    def values(self):
        return np.linspace(self.min, self.max, int(self.steps))


@dataclass(frozen=True)
class SweepSpec:
    axes: tuple
    linked: tuple = ()
    dispatch: dict = field(default_factory=dict)
    margin: float = DEFAULT_MARGIN
    seed: int = 0

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 3:
            raise ValidationError("a sweep needs between 1 and 3 axes")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"axes", "linked", "dispatch", "margin", "seed", "description"}
        if unknown:
            raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
        try:
            axes = tuple(Axis(path=a["path"], min=float(a["min"]), max=float(a["max"]),
                              steps=int(a["steps"])) for a in data["axes"])
            linked = tuple(LinkedVar(**link) for link in data.get("linked", []))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed sweep spec: {exc}") from None
        return cls(axes=axes, linked=linked, dispatch=dict(data.get("dispatch", {})),
                   margin=float(data.get("margin", DEFAULT_MARGIN)), seed=int(data.get("seed", 0)))

    def to_dict(self):
        return {
            "axes": [{"path": a.path, "min": a.min, "max": a.max, "steps": a.steps} for a in self.axes],
            "linked": [{"target": l.target, "source": l.source, "a": l.a, "c": l.c} for l in self.linked],
            "dispatch": self.dispatch,
            "margin": self.margin,
            "seed": self.seed,
        }

    @property
    def shape(self):
        return tuple(int(a.steps) for a in self.axes)

    def validate_against(self, network):
        ids = {u.id: u for u in network.units}
        for ax in self.axes:
            unit = ids.get(ax.unit)
            if unit is None:
                raise ValidationError(f"axis {ax.path!r}: unknown unit {ax.unit!r}")
            if ax.attr in DISPATCH_ATTRS:
                continue
            names = {f.name for f in fields(unit.params)} - {"omega_b"}
            if ax.attr not in names:
                raise ValidationError(f"axis {ax.path!r}: {unit.kind} unit has no parameter {ax.attr!r}")
        base = dispatch_from_dict(network, dict(self.dispatch, linked=[
            {"target": l.target, "source": l.source, "a": l.a, "c": l.c} for l in self.linked]))
        base.resolved()
        return base


def load_sweep_spec(path):
    try:
        return SweepSpec.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise ConfigError(f"sweep file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


@dataclass
class PointRecord:
    coords: tuple
    verdict: str
    re_dominant: float = math.nan
    im_dominant: float = math.nan
    top_state: str = ""
    pf_status: str = "converged"


@dataclass
class SweepResult:
    axes: tuple
    records: list
    provenance: dict

    @property
    def shape(self):
        return tuple(int(a.steps) for a in self.axes)

    def verdicts(self):
        return np.array([r.verdict for r in self.records], dtype=object).reshape(self.shape)

    def to_csv(self, path=None):
        lines = [f"# gridstab sweep config={self.provenance['config']} "
                 f"version={self.provenance['version']}"]
        header = [a.path for a in self.axes] + ["verdict", "re_dominant", "im_dominant", "top_state"]
        rows = [header]
        for r in self.records:
            rows.append([repr(float(c)) for c in r.coords]
                        + [r.verdict, repr(float(r.re_dominant)), repr(float(r.im_dominant)), r.top_state])
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        text = "\n".join(lines) + "\n" + buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path):
        text = Path(path).read_text().splitlines()
        prov = {}
        body = []
        for line in text:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        prov[k] = v
            else:
                body.append(line)
        reader = csv.reader(body)
        header = next(reader)
        n_ax = header.index("verdict")
        rows = list(reader)
        coords = np.array([[float(v) for v in row[:n_ax]] for row in rows]).reshape(len(rows), n_ax)
        axes = []
        for k, path in enumerate(header[:n_ax]):
            vals = np.unique(coords[:, k])
            axes.append(Axis(path, float(vals[0]), float(vals[-1]), len(vals)))
        records = [PointRecord(tuple(coords[i]), row[n_ax], float(row[n_ax + 1]), float(row[n_ax + 2]),
                               row[n_ax + 3]) for i, row in enumerate(rows)]
        return cls(tuple(axes), records, prov)


def config_digest(network, spec):
    blob = json.dumps({"network": network.to_dict(), "sweep": spec.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _version():
    from . import __version__
    return __version__


def _apply_point(network, base_dispatch, axes, coords):
    net = network
    disp = base_dispatch
    for ax, val in zip(axes, coords):
        if ax.attr in DISPATCH_ATTRS:
            disp = disp.with_value(ax.path, val)
        else:
            net = net.with_unit_params(ax.unit, **{ax.attr: float(val)})
    return net, disp.resolved()


def _run_chain(args):
    network, spec, base_dispatch, outer_idx = args
    axes = spec.axes
    inner = axes[-1]
    out = []
    warm = None
    with threadpool_limits(limits=1):
        for j, val in enumerate(inner.values):
            idx = tuple(outer_idx) + (j,)
            coords = tuple(float(axes[k].values[i]) for k, i in enumerate(idx))
            rec, warm = _evaluate_point(network, spec, base_dispatch, idx, coords, warm)
            out.append((idx, rec))
    return out


def _evaluate_point(network, spec, base_dispatch, idx, coords, warm):
    try:
        net, disp = _apply_point(network, base_dispatch, spec.axes, coords)
    except ValidationError:
        return PointRecord(coords, PF_INFEASIBLE, pf_status="invalid-parameters"), None
    pf = None
    for start in ((warm, None) if warm is not None else (None,)):
        try:
            pf = solve_power_flow(net, disp, warm_start=start)
            break
        except (PowerFlowDiverged, SingularJacobian):
            continue
    if pf is None:
        return PointRecord(coords, PF_INFEASIBLE, pf_status="diverged"), None
    try:
        eq = assemble_equilibrium(net, disp, pf=pf)
    except (InfeasibleOperatingPoint, InitializationError):
        return PointRecord(coords, PF_INFEASIBLE, pf_status="unit-infeasible"), pf
    rng = np.random.default_rng([spec.seed] + list(idx))
    _, _, rep = analyze(eq.system, eq, rng=rng, margin=spec.margin)
    lam = rep.dominant if rep.dominant is not None else complex(math.nan, math.nan)
    return PointRecord(coords, rep.verdict, lam.real, lam.imag, rep.top_state), pf


def worker_count(parallelism=None):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return n
    return max(1, int(parallelism or 1))


def run_sweep(network, spec, parallelism=1):
    """Classify every grid point of ``spec``; see the module docstring."""
    base = spec.validate_against(network)
    outer_shape = spec.shape[:-1]
    jobs = [(network, spec, base, idx) for idx in itertools.product(*(range(n) for n in outer_shape))]
    workers = worker_count(parallelism)
    grid = {}
    if workers == 1 or len(jobs) == 1:
        for job in jobs:
            grid.update(_run_chain(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_run_chain, jobs):
                grid.update(chunk)
    records = [grid[idx] for idx in itertools.product(*(range(n) for n in spec.shape))]
    if all(r.verdict == PF_INFEASIBLE for r in records):
        warnings.warn("every sweep point is infeasible", RuntimeWarning, stacklevel=2)
    prov = {"config": config_digest(network, spec), "version": _version()}
    return SweepResult(spec.axes, records, prov)


# --------------------------------------------------------------------------
# summaries


@dataclass
class RegionSummary:
    p_axis: str
    max_stable_p: dict  # slice coords (other axes) -> max stable p, -inf if none
    trends: dict
    stable_count: int
    total: int


def _max_stable_p(result, p_k):
    verdict = result.verdicts()
    p_vals = result.axes[p_k].values
    other = [k for k in range(len(result.axes)) if k != p_k]
    table = {}
    for idx in itertools.product(*(range(result.shape[k]) for k in other)):
        sl = [slice(None)] * len(result.axes)
        for k, i in zip(other, idx):
            sl[k] = i
        col = verdict[tuple(sl)]
        stable = [p for p, v in zip(p_vals, col) if v == "Stable"]
        key = tuple(float(result.axes[k].values[i]) for k, i in zip(other, idx))
        table[key] = max(stable) if stable else -math.inf
    return other, table


def region_summary(result, p_axis=None, v_from=1.0):
    """Per-slice maximum stable p and directional trend fractions.

    Trends (each a fraction in [0, 1], ``None`` when the axis is absent):
      ``v_nonincreasing``  share of slices in which max stable p does not
                           increase with v over v >= ``v_from``
      ``q_absorb_ge_supply`` share of (slice, |q|) pairs where absorbing |q|
                           admits at least the p admitted when supplying |q|
      ``k_nondecreasing``  share of slices in which max stable p does not
                           decrease as the parameter axis grows
      ``k_count_ratio``    stable-point count at the largest parameter value
                           divided by the count at the smallest
    """
    axes = result.axes
    if p_axis is None:
        cands = [k for k, a in enumerate(axes) if a.attr == "p"]
        if not cands:
            raise ValidationError("result has no active-power axis")
        p_k = cands[0]
    else:
        p_k = [a.path for a in axes].index(p_axis)
    other, table = _max_stable_p(result, p_k)
    verdict = result.verdicts()
    trends = {"v_nonincreasing": None, "q_absorb_ge_supply": None, "k_nondecreasing": None,
              "k_count_ratio": None}

    def slices_along(k_axis):
        pos = other.index(k_axis)
        rest = [k for k in other if k != k_axis]
        groups = {}
        for key, val in table.items():
            rkey = tuple(key[other.index(k)] for k in rest)
            groups.setdefault(rkey, []).append((key[pos], val))
        return {r: sorted(v) for r, v in groups.items()}

    for k in other:
        ax = axes[k]
        if ax.attr == "v":
            ok = []
            for seq in slices_along(k).values():
                vals = [m for v, m in seq if v >= v_from - 1e-12]
                ok.append(all(b <= a for a, b in zip(vals, vals[1:])))
            trends["v_nonincreasing"] = float(np.mean(ok)) if ok else None
        elif ax.attr == "q":
            ok = []
            for seq in slices_along(k).values():
                lookup = {round(q, 12): m for q, m in seq}
                for q, m in seq:
                    if q > 0 and round(-q, 12) in lookup:
                        ok.append(lookup[round(-q, 12)] >= m)
            trends["q_absorb_ge_supply"] = float(np.mean(ok)) if ok else None
        elif ax.attr not in DISPATCH_ATTRS:
            ok = []
            for seq in slices_along(k).values():
                vals = [m for _, m in seq]
                ok.append(all(b >= a for a, b in zip(vals, vals[1:])))
            trends["k_nondecreasing"] = float(np.mean(ok)) if ok else None
            first = np.take(verdict, 0, axis=k)
            last = np.take(verdict, -1, axis=k)
            n0, n1 = int(np.sum(first == "Stable")), int(np.sum(last == "Stable"))
            trends["k_count_ratio"] = (n1 / n0) if n0 else (math.inf if n1 else 1.0)
            trends["k_stable_counts"] = (n0, n1)
    stable = int(np.sum(verdict == "Stable"))
    return RegionSummary(axes[p_k].path, table, trends, stable, verdict.size)


def summary_to_dict(summary, other_paths):
    return {
        "p_axis": summary.p_axis,
        "stable_points": summary.stable_count,
        "total_points": summary.total,
        "trends": summary.trends,
        "max_stable_p": [
            dict(zip(other_paths, key), max_stable_p=(None if math.isinf(val) else val))
            for key, val in summary.max_stable_p.items()
        ],
    }
