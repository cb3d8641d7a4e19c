"""Sublinear gauge functions and the scalar lemmas about them.

A *sublinear function* here is a concave, nondecreasing function
kappa: [0, inf) -> [1, inf) with kappa(t)/t -> 0.  These gauges control
every error term in the rest of the package, so this module keeps them
honest: it can repair a raw candidate into a concave majorant
(`concavify`), verify the scaling inequality kappa(lambda*t) <= lambda*kappa(t),
decide "D is small compared to r" (D <= r / (2 kappa(r))), and compute
estimation constants

    m(c) = sup_t  kappa(t + c*kappa(t)) / kappa(t),

which is finite for every sublinear kappa: once kappa(t0) <= t0 we have
kappa(t + c*kappa(t)) <= kappa((1+c) t) <= (1+c) kappa(t), so the grid
supremum plus a tail monotonicity check settles the value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, Inconclusive, NotSublinear

TOL = 1e-9
DEFAULT_GRID_CAP = 1.0e6
DEFAULT_GRID_POINTS = 512


def log_grid(cap: float = DEFAULT_GRID_CAP, points: int = DEFAULT_GRID_POINTS,
             lo: float = 1e-3) -> np.ndarray:
    """Log-spaced scan grid on [0, cap], anchored so that 0 and 1 are exact."""
    g = np.geomspace(lo, cap, points)
    g = np.unique(np.concatenate(([0.0, 1.0], g)))
    return g


@dataclass(frozen=True)
class SublinearFn:
    """An evaluable sublinear gauge.

    Immutable after construction; all operations on it are pure.  The
    ``grid_cap`` field bounds the argument range of every numeric scan
    performed on this function.
    """

    fn: Callable[[float], float]
    tag: str
    grid_cap: float = DEFAULT_GRID_CAP

    def __call__(self, t: float) -> float:
        return evaluate(self, t)

    def __repr__(self) -> str:
        return f"SublinearFn({self.tag!r})"


def evaluate(f: SublinearFn, t: float) -> float:
    """Evaluate f at t >= 0.  Result is clamped to >= 1 per the definition."""
    if t < 0:
        raise DomainError(f"sublinear functions are defined on t >= 0, got {t}")
    v = f.fn(t)
    return v if v >= 1.0 else 1.0


def _upper_concave_hull(ts: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Values of the least concave majorant of the points (ts, vs) at ts.

    Monotone-chain upper hull; ts must be strictly increasing.
    """
    hull: list[int] = []
    for i in range(len(ts)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            # pop i1 if it lies below the chord i0 -> i
            cross = (ts[i1] - ts[i0]) * (vs[i] - vs[i0]) - (ts[i] - ts[i0]) * (vs[i1] - vs[i0])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    out = np.empty_like(vs)
    for a, b in zip(hull, hull[1:]):
        seg = slice(a, b + 1)
        if ts[b] == ts[a]:
            out[seg] = vs[b]
        else:
            out[seg] = vs[a] + (vs[b] - vs[a]) * (ts[seg] - ts[a]) / (ts[b] - ts[a])
    out[hull[-1]:] = vs[hull[-1]]
    return out


def _check_sublinear_on_grid(raw: Callable[[float], float], ts: np.ndarray) -> None:
    """Reject raw functions whose ratio raw(t)/t is nondecreasing at the tail.

    This is a falsifier, not a proof of sublinearity: a ratio that still
    oscillates at the tail (e.g. a dyadic staircase) passes, while any
    function whose ratio has stopped decreasing (linear and worse) fails.
    """
    tail = ts[ts >= 1.0]
    if len(tail) < 8:
        raise DomainError("grid too coarse to witness sublinearity")
    ratios = np.array([max(raw(t), 1.0) / t for t in tail])
    q = max(len(ratios) // 4, 4)
    window = ratios[-q:]
    if not np.any(np.diff(window) < -TOL):
        worst = float(tail[-q:][np.argmax(window)])
        raise NotSublinear(
            f"ratio f(t)/t never decreases on the grid tail (max at t={worst:g})",
            witness=(worst, float(window.max())),
        )


def concavify(raw: Callable[[float], float], grid: Sequence[float] | None = None,
              tag: str = "concavified") -> SublinearFn:
    """Discrete concave majorant of a raw sublinear candidate.

    Returns a SublinearFn interpolating the least concave majorant on the
    grid, with raw values clipped to >= 1 first.  The multiplicative gap
    C = max(hull/raw) is recorded on the result as ``concavify_ratio``.
    Rejects raw functions that are not sublinear on the grid.
    """
    ts = np.asarray(grid if grid is not None else log_grid(), dtype=float)
    ts = np.unique(ts)
    _check_sublinear_on_grid(raw, ts)
    vs = np.array([max(raw(t), 1.0) for t in ts])
    hull = _upper_concave_hull(ts, vs)
    # concave majorant of nondecreasing-at-scale data can still dip on noisy
    # input; a running max keeps monotonicity without raising the hull gap
    hull = np.maximum.accumulate(hull)
    ratio = float(np.max(hull / vs))
    cap = float(ts[-1])
    t_arr = ts
    h_arr = hull
    last_slope = 0.0
    if len(ts) >= 2 and ts[-1] > ts[-2]:
        last_slope = float((hull[-1] - hull[-2]) / (ts[-1] - ts[-2]))

    def _eval(t: float, _t=t_arr, _h=h_arr, _cap=cap, _sl=last_slope) -> float:
        if t <= _t[0]:
            return float(_h[0])
        if t >= _cap:
            return float(_h[-1] + _sl * (t - _cap))
        return float(np.interp(t, _t, _h))

    out = SublinearFn(_eval, tag, grid_cap=cap)
    object.__setattr__(out, "concavify_ratio", ratio)
    return out


def check_scaling(f: SublinearFn, lam: float,
                  grid: Sequence[float] | None = None) -> tuple[bool, float]:
    """Verify kappa(lambda t) <= lambda kappa(t) on the grid.

    Returns (verdict, worst ratio f(lam t) / (lam f(t))).
    """
    if lam <= 1:
        raise DomainError(f"scaling lemma needs lambda > 1, got {lam}")
    ts = np.asarray(grid if grid is not None else log_grid(f.grid_cap), dtype=float)
    worst = 0.0
    ok = True
    for t in ts:
        lhs = evaluate(f, lam * t)
        rhs = lam * evaluate(f, t)
        worst = max(worst, lhs / rhs)
        if lhs > rhs + TOL:
            ok = False
    return ok, worst


def small_compared(D: float, r: float, f: SublinearFn) -> bool:
    """D is small compared to radius r when D <= r / (2 kappa(r))."""
    if r <= 0:
        raise DomainError(f"radius must be positive, got {r}")
    return D <= r / (2.0 * evaluate(f, r))


@dataclass(frozen=True)
class EstimationConstant:
    """Output of the sublinear estimation: sup_t f(t + c f(t))/f(t)."""

    c: float
    m: float
    witness_t: float

    def __post_init__(self):
        if self.m < 1.0 - TOL:
            raise DomainError(f"estimation constant below 1: {self.m}")


def estimation_constant(f: SublinearFn, c: float,
                        grid: Sequence[float] | None = None) -> EstimationConstant:
    """Compute m = sup_t f(t + c f(t))/f(t) by grid scan plus tail check.

    The supremum is finite: for t >= t0 with f(t0) <= t0 the scaling lemma
    gives f(t + c f(t)) <= f((1+c) t) <= (1+c) f(t).  We require such a t0
    inside the grid and a nonincreasing ratio on the final grid quarter;
    otherwise the scan is inconclusive and the tail profile is raised.
    """
    if c < 0:
        raise DomainError(f"estimation constant needs c >= 0, got {c}")
    ts = np.asarray(grid if grid is not None else log_grid(f.grid_cap), dtype=float)
    ratios = np.empty(len(ts))
    for i, t in enumerate(ts):
        ft = evaluate(f, t)
        ratios[i] = evaluate(f, t + c * ft) / ft
    i_best = int(np.argmax(ratios))
    m = float(ratios[i_best])

    # tail sanity: a crossing point f(t0) <= t0 must exist below the cap, and
    # the ratio must have stopped growing on the last quarter of the grid
    crossing = next((t for t in ts if t > 0 and evaluate(f, t) <= t), None)
    if crossing is None:
        raise Inconclusive(
            f"no t <= {ts[-1]:g} with f(t) <= t; cannot bound the tail",
            detail=list(zip(ts[-8:], ratios[-8:])),
        )
    q = max(len(ts) // 4, 2)
    tail = ratios[-q:]
    if np.any(np.diff(tail) > TOL * max(1.0, m)):
        raise Inconclusive(
            "estimation ratio still growing at the grid tail",
            detail=list(zip(ts[-q:], tail)),
        )
    return EstimationConstant(c=c, m=max(m, 1.0), witness_t=float(ts[i_best]))


# --- canonical family ------------------------------------------------------

def _kappa_one() -> SublinearFn:
    return SublinearFn(lambda t: 1.0, "1")


def _kappa_log() -> SublinearFn:
    return SublinearFn(lambda t: max(1.0, math.log(math.e + t)), "log")


def _kappa_sqrt() -> SublinearFn:
    return SublinearFn(lambda t: max(1.0, math.sqrt(t)), "sqrt")


def _kappa_log_pow(p: int) -> SublinearFn:
    # log^p is not concave near 0 for p >= 3, so repair through concavify
    raw = lambda t: max(1.0, math.log(math.e + t)) ** p
    return concavify(raw, tag=f"log^{p}")


def registry() -> dict[str, SublinearFn]:
    """The canonical gauge family, keyed by config tag."""
    fam = {
        "1": _kappa_one(),
        "log": _kappa_log(),
        "sqrt": _kappa_sqrt(),
    }
    for p in (2, 3):
        fam[f"log^{p}"] = _kappa_log_pow(p)
    return fam


_REGISTRY: dict[str, SublinearFn] | None = None


def by_tag(tag: str) -> SublinearFn:
    """Look up a canonical gauge by its config tag; DomainError if unknown."""
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = registry()
    try:
        return _REGISTRY[tag]
    except KeyError:
        raise DomainError(
            f"unknown kappa tag {tag!r}; known: {sorted(_REGISTRY)}"
        ) from None


def from_table(path: str, tag: str = "table") -> SublinearFn:
    """Custom gauge from a text file of '<t> <value>' pairs.

    Values are linearly interpolated, then concavified; beyond the last
    tabulated point the function is held constant (still sublinear).
    """
    pts = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            t, v = line.split()
            pts.append((float(t), float(v)))
    if len(pts) < 2:
        raise DomainError(f"need at least two table points in {path}")
    pts.sort()
    ts = np.array([p[0] for p in pts])
    vs = np.array([p[1] for p in pts])

    def raw(t, _t=ts, _v=vs):
        if t >= _t[-1]:
            return float(_v[-1])
        return float(np.interp(t, _t, _v))

    grid = np.unique(np.concatenate((log_grid(float(ts[-1]) if ts[-1] > 1 else 10.0), ts)))
    return concavify(raw, grid=grid, tag=tag)
