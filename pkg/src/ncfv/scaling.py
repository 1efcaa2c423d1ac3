"""Crossing points and single-parameter scaling collapse of curve families."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .errors import (AllPairsFail, DegenerateOverlap, NoCrossingWarning,
                     ValidationError)

GRID_POINTS = 101
MIN_OVERLAP = 0.2


@dataclass(frozen=True, eq=False)
class Curve:
    x: np.ndarray
    y: np.ndarray
    err: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class CurveFamily:
    """Curves ``label -> (x, y[, err])`` with ``label`` a temperature or a size.

    At least two curves with four points each; the samples are sorted by
    ``x`` on construction.
    """

    curves: dict

    def __post_init__(self):
        clean = {}
        for label, c in dict(self.curves).items():
            if not isinstance(c, Curve):
                c = Curve(*[None if v is None else np.asarray(v, dtype=float) for v in c])
            order = np.argsort(c.x, kind="stable")
            x, y = np.asarray(c.x, float)[order], np.asarray(c.y, float)[order]
            err = None if c.err is None else np.asarray(c.err, float)[order]
            if len(x) < 4:
                raise ValidationError(f"curve {label} has fewer than 4 points")
            if np.any(np.diff(x) <= 0):
                raise ValidationError(f"curve {label} has repeated abscissae")
            clean[float(label)] = Curve(x, y, err)
        if len(clean) < 2:
            raise ValidationError("a family needs at least 2 curves")
        lo = max(c.x[0] for c in clean.values())
        hi = min(c.x[-1] for c in clean.values())
        if hi <= lo:
            raise ValidationError("curves do not overlap")
        object.__setattr__(self, "curves", dict(sorted(clean.items())))

    @property
    def labels(self):
        return list(self.curves)

    @property
    def raw_range(self):
        return (min(c.x[0] for c in self.curves.values()),
                max(c.x[-1] for c in self.curves.values()))


def _pair_crossings(a, b):
    x = np.union1d(a.x, b.x)
    x = x[(x >= max(a.x[0], b.x[0])) & (x <= min(a.x[-1], b.x[-1]))]
    d = np.interp(x, a.x, a.y) - np.interp(x, b.x, b.y)
    out = []
    for k in range(len(x) - 1):
        if d[k] == 0:
            out.append((x[k], abs(d[k + 1] - d[k - 1]) if 0 < k else abs(d[k + 1])))
        elif d[k] * d[k + 1] < 0:
            t = d[k] / (d[k] - d[k + 1])
            out.append((x[k] + t * (x[k + 1] - x[k]), abs(d[k + 1] - d[k]) / (x[k + 1] - x[k])))
    if len(x) and d[-1] == 0:
        out.append((x[-1], 0.0))
    return out


def crossing_point(family, window=None):
    """Mean and spread of the pairwise intersection abscissae.

    Curves are linearly interpolated between samples. When a pair crosses
    more than once the crossing with the steepest difference is used.
    Pairs without a crossing are skipped with a ``NoCrossingWarning``.

    Parameters
    ----------
    family : CurveFamily
    window : tuple of float, optional
        Only crossings inside ``[lo, hi]`` count.

    Returns
    -------
    (float, float)
        ``(eps_c, spread)`` with spread the population standard deviation.

    Raises
    ------
    AllPairsFail
    """
    xs = []
    for (la, a), (lb, b) in itertools.combinations(family.curves.items(), 2):
        cands = _pair_crossings(a, b)
        if window is not None:
            cands = [c for c in cands if window[0] <= c[0] <= window[1]]
        if not cands:
            warnings.warn(f"curves {la} and {lb} do not cross", NoCrossingWarning, stacklevel=2)
            continue
        xs.append(max(cands, key=lambda c: c[1])[0])
    if not xs:
        raise AllPairsFail("no pair of curves crosses")
    xs = np.asarray(xs)
    return float(xs.mean()), float(xs.std())


def rescale(x, label, exponent, eps_c, mode, ref):
    """Rescaled abscissa.

    ``temperature``: ``(x - eps_c) (T / T0)^(-kappa)``;
    ``size``: ``eps_c + (x - eps_c) (L / L0)^(1/nu)``.
    """
    if mode == "temperature":
        return (x - eps_c) * (label / ref) ** (-exponent)
    if mode == "size":
        if exponent <= 0:
            raise ValidationError("nu must be > 0")
        return eps_c + (x - eps_c) * (label / ref) ** (1.0 / exponent)
    raise ValidationError(f"unknown collapse mode {mode!r}")


def collapse_objective(family, exponent, eps_c, mode="temperature", ref=None, weighted=False):
    """Summed variance across curves on a 101-point common grid.

    Each curve is interpolated with a monotone cubic (PCHIP) in the rescaled
    variable. With ``weighted`` the variance at each grid point uses inverse
    squared interpolated error bars as weights.

    Raises
    ------
    DegenerateOverlap
        If the common rescaled range is below 20% of the raw range.
    """
    ref = family.labels[0] if ref is None else ref
    xs = {lab: rescale(c.x, lab, exponent, eps_c, mode, ref) for lab, c in family.curves.items()}
    lo = max(x[0] for x in xs.values())
    hi = min(x[-1] for x in xs.values())
    r0, r1 = family.raw_range
    if hi - lo < MIN_OVERLAP * (r1 - r0):
        raise DegenerateOverlap(f"common range {max(hi - lo, 0):.3g} below "
                                f"{MIN_OVERLAP:.0%} of {r1 - r0:.3g}")
    grid = np.linspace(lo, hi, GRID_POINTS)
    vals = np.array([PchipInterpolator(xs[lab], c.y)(grid) for lab, c in family.curves.items()])
    if not weighted:
        return float(vals.var(axis=0).sum())
    errs = np.array([np.interp(grid, xs[lab], c.err) if c.err is not None else np.ones_like(grid)
                     for lab, c in family.curves.items()])
    w = 1.0 / np.maximum(errs, 1e-300) ** 2
    mean = (w * vals).sum(axis=0) / w.sum(axis=0)
    return float(((w * (vals - mean) ** 2).sum(axis=0) / w.sum(axis=0)).sum())


@dataclass(frozen=True)
class CollapseResult:
    exponent: float
    eps_c: float
    objective: float


def _safe(family, mode, ref, weighted):
    def f(exponent, eps_c):
        try:
            return collapse_objective(family, exponent, eps_c, mode, ref, weighted)
        except DegenerateOverlap:
            return np.inf
    return f


def _minimize_1d(f, lo, hi, coarse=11, tol=1e-6):
    """Coarse scan followed by a bounded Brent (golden-section plus parabolic) refinement."""
    xs = np.linspace(lo, hi, coarse)
    fs = np.array([f(x) for x in xs])
    if not np.isfinite(fs).any():
        return xs[0], np.inf
    k = int(np.argmin(fs))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, coarse - 1)]
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": tol})
    if res.fun <= fs[k]:
        return float(res.x), float(res.fun)
    return float(xs[k]), float(fs[k])


def collapse_fit(family, mode="temperature", ref=None, exponent_range=(0.05, 0.5),
                 eps_range=None, weighted=False):
    """Exponent and critical point minimizing :func:`collapse_objective`.

    The exponent (``kappa`` in temperature mode, ``nu`` in size mode) is
    searched in ``exponent_range``; for each trial exponent ``eps_c`` is
    optimized in ``eps_range`` (default: the crossing point plus or minus
    ten percent of the raw range).

    Returns
    -------
    CollapseResult

    Raises
    ------
    ValidationError
        With fewer than three curves.
    DegenerateOverlap
        If no trial point leaves enough common range.
    """
    if len(family.curves) < 3:
        raise ValidationError("collapse fit needs at least 3 curves")
    ref = family.labels[0] if ref is None else ref
    if eps_range is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoCrossingWarning)
            c0, _ = crossing_point(family)
        r0, r1 = family.raw_range
        eps_range = (c0 - 0.1 * (r1 - r0), c0 + 0.1 * (r1 - r0))
    f = _safe(family, mode, ref, weighted)

    def inner(exponent):
        return _minimize_1d(lambda e: f(exponent, e), *eps_range)

    def outer(exponent):
        return inner(exponent)[1]

    best_exp, best_obj = _minimize_1d(outer, *exponent_range)
    if not np.isfinite(best_obj):
        raise DegenerateOverlap("no exponent in the search box leaves enough overlap")
    best_eps, best_obj = inner(best_exp)
    return CollapseResult(best_exp, best_eps, best_obj)


def kappa_from_nu(p, nu):
    """``kappa = p / (2 nu)``."""
    if not nu > 0:
        raise ValidationError("nu must be > 0")
    return p / (2.0 * nu)
