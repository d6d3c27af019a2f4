"""Control-field optimization, size-scaling fits and measurement-efficiency maps."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from critsense.fisher import cfi_matrix, qfi_point
from critsense.global_metric import SensingRegion, g_multi, g_single, scalar_bound_trace
from critsense.lanczos import ConvergenceError
from critsense.spin_lattice import FieldPoint, ProbeConfig

TIE_RTOL = 1e-10
POLISH_XATOL = 1e-4
POLISH_MAXITER = 200
# failures that mark a single g evaluation as unusable rather than aborting a scan
EVALUATION_ERRORS = (ArithmeticError, ValueError, ConvergenceError)


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchAxis:
    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.hi >= self.lo):
            raise ValueError("bracket must be finite with hi >= lo")
        if not self.step > 0:
            raise ValueError("resolution must be positive")

    def grid(self) -> np.ndarray:
        n = int(round((self.hi - self.lo) / self.step)) + 1
        return np.linspace(self.lo, self.hi, n) if n > 1 else np.array([self.lo])


DEFAULT_SEARCH_1D = (SearchAxis(-3.0, 3.0, 0.02),)
DEFAULT_SEARCH_2D = (SearchAxis(0.0, 3.0, 0.05), SearchAxis(-2.0, 2.0, 0.05))


@dataclass
class OptimizationResult:
    B_star: tuple[float, ...]  # (B_z,) or (B_x, B_z)
    g_star: float
    trace: list  # (B tuple, g) in evaluation order; g = inf for failures
    resolution: tuple[float, ...]
    grid_best: tuple[float, ...]
    g_grid_best: float
    boundary: bool = False
    failures: list = field(default_factory=list)  # (B tuple, message)
    polished: bool = False
    n_grid: int = 0  # the first n_grid trace entries are the grid scan

    @property
    def grid(self) -> list:
        return self.trace[: self.n_grid]


def make_objective(config: ProbeConfig, region: SensingRegion, *, engine=None, warm: bool = True, **g_opts) -> Callable:
    """g as a function of the control vector: (B_z,) for d = 1, (B_x, B_z) for d = 2.

    With ``warm`` the two-parameter objective reuses eigensolutions from its
    previous call; it must then be called sequentially.
    """
    if region.d == 1:
        engine = engine or "free_fermion"
        return lambda B: g_single(config.with_control(B_z=B[-1]), region, engine, **g_opts).value
    engine = engine or "ed"
    cache = {} if warm else None
    return lambda B: g_multi(
        config.with_control(B_x=B[0], B_z=B[1]), region, engine=engine, warm_cache=cache, **g_opts
    ).value


def minimize_g(
    config: ProbeConfig,
    region: SensingRegion,
    search: Sequence[SearchAxis] | None = None,
    *,
    objective: Callable | None = None,
    fold_mirror: bool = True,
    polish: bool = True,
    threads: int = 1,
    xatol: float = POLISH_XATOL,
    maxiter: int = POLISH_MAXITER,
    **g_opts,
) -> OptimizationResult:
    """Grid scan over the control fields, then a bounded Nelder-Mead polish.

    ``search`` holds one axis (B_z) for one-parameter regions and two
    (B_x, B_z) otherwise. With ``fold_mirror`` only B_z >= -h_z^cen is
    scanned: g is exactly symmetric about that line, and without folding the
    two mirror optima tie to rounding and the pick would be arbitrary.
    """
    d = region.d
    search = tuple(search) if search is not None else (DEFAULT_SEARCH_1D if d == 1 else DEFAULT_SEARCH_2D)
    if len(search) != d:
        raise ValueError(f"need {d} search axes for a {d}-parameter region")
    if objective is None:
        objective = make_objective(config, region, warm=threads == 1, **g_opts)
    hz_cen = region.centers[-1]
    fold_line = -hz_cen

    axes = [a.grid() for a in search]
    # folding only matters when the bracket reaches across the mirror line
    folded = fold_mirror and search[-1].lo < fold_line <= search[-1].hi
    if folded:
        axes[-1] = axes[-1][axes[-1] >= fold_line - 1e-12]
    points = [tuple(float(v) for v in p) for p in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)]

    failures = []

    def safe(B):
        try:
            g = float(objective(B))
        except EVALUATION_ERRORS as err:
            failures.append((B, f"{type(err).__name__}: {err}"))
            return math.inf
        if not math.isfinite(g):
            failures.append((B, "non-finite g"))
            return math.inf
        return g

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(safe, points))
        failures.sort(key=lambda f: f[0])
    else:
        values = [safe(B) for B in points]
    trace = list(zip(points, values))
    finite = [g for g in values if math.isfinite(g)]
    if not finite:
        raise OptimizationError(f"all {len(points)} grid evaluations failed; first: {failures[0][1]}")
    g_min = min(finite)
    ties = [B for B, g in trace if g <= g_min + TIE_RTOL * abs(g_min)]
    best = min(ties)
    g_best = dict(trace)[best]
    boundary = any(
        (math.isclose(best[i], search[i].lo, abs_tol=1e-12) and not (folded and i == d - 1))
        or math.isclose(best[i], search[i].hi, abs_tol=1e-12)
        for i in range(d)
    )
    if boundary:
        warnings.warn(f"grid optimum {best} lies on the search bracket", RuntimeWarning, stacklevel=2)

    B_star, g_star, polished = best, g_best, False
    if polish and any(a.size > 1 for a in axes):
        lo = np.array([a.lo for a in search])
        hi = np.array([a.hi for a in search])
        if folded:
            lo[-1] = fold_line

        def f(x):
            B = tuple(float(v) for v in np.clip(x, lo, hi))
            g = safe(B)
            trace.append((B, g))
            return g

        step = np.array([a.step for a in search])
        x0 = np.array(best)
        simplex = [x0] + [np.clip(x0 + np.eye(d)[i] * step[i], lo, hi) for i in range(d)]
        for i in range(1, d + 1):
            if np.allclose(simplex[i], x0):
                simplex[i] = np.clip(x0 - np.eye(d)[i - 1] * step[i - 1], lo, hi)
        res = minimize(
            f, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
            options={"xatol": xatol, "fatol": 0.0, "maxiter": maxiter, "initial_simplex": np.array(simplex)},
        )
        cand = tuple(float(v) for v in np.clip(res.x, lo, hi))
        g_cand = dict(trace).get(cand, math.inf)
        if g_cand < g_star:
            B_star, g_star, polished = cand, g_cand, True

    return OptimizationResult(
        B_star=B_star,
        g_star=g_star,
        trace=trace,
        resolution=tuple(a.step for a in search),
        grid_best=best,
        g_grid_best=g_best,
        boundary=boundary,
        failures=failures,
        polished=polished,
        n_grid=len(points),
    )


# -- size scaling --------------------------------------------------------------

@dataclass
class ScalingFit:
    a: float
    b: float
    c: float
    residual: float  # norm of relative residuals (y_fit - y) / y
    L: np.ndarray
    growth: bool = False  # model a L^b + c instead of a L^-b + c
    ill_determined: bool = False

    def __call__(self, L):
        L = np.asarray(L, dtype=float)
        return self.a * L ** (self.b if self.growth else -self.b) + self.c


def _inner(X, y, w):
    """Weighted least squares for y ~ a X + c with c >= 0."""
    A = np.column_stack([X, np.ones_like(X)]) * w[:, None]
    (a, c), *_ = np.linalg.lstsq(A, y * w, rcond=None)
    if c < 0:
        a = float((X * w) @ (y * w) / ((X * w) @ (X * w)))
        c = 0.0
    r = (a * X + c - y) * w
    return float(a), float(c), float(r @ r)


def fit_scaling(L, y, *, growth: bool = False, b_range=(0.0, 4.0), b_points: int = 801) -> ScalingFit:
    """Fit y = a L^-b + c (or a L^b + c with ``growth``) subject to c >= 0.

    Residuals are relative (weights 1/y), so every size counts equally
    whatever the magnitude of y. The exponent is located by a scan with the
    linear parameters solved exactly at each b, then polished jointly.
    """
    L = np.asarray(L, dtype=float)
    y = np.asarray(y, dtype=float)
    if L.shape != y.shape or L.ndim != 1 or L.size < 4:
        raise ValueError("need at least four (L, y) points")
    if np.unique(L).size != L.size or np.any(L <= 0):
        raise ValueError("L values must be positive and distinct")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise ValueError("y values must be finite and positive")
    sign = 1.0 if growth else -1.0
    w = 1.0 / y
    if np.ptp(y) <= 1e-12 * np.max(np.abs(y)):
        return ScalingFit(0.0, 0.0, float(y.mean()), 0.0, L, growth, ill_determined=True)

    # scale L so that L^b stays well conditioned
    Lr = L / np.exp(np.mean(np.log(L)))
    bs = np.linspace(*b_range, b_points)
    scan = [_inner(Lr ** (sign * b), y, w) for b in bs]
    k = int(np.argmin([s[2] for s in scan]))
    a0, c0, _ = scan[k]

    def resid(p):
        a, b, c = p
        return (a * Lr ** (sign * b) + c - y) * w

    sol = least_squares(
        resid, [a0, bs[k], c0], bounds=([-np.inf, -np.inf, 0.0], [np.inf, np.inf, np.inf]),
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000,
    )
    a, b, c = sol.x
    if 2 * sol.cost > scan[k][2]:
        a, b, c = a0, bs[k], c0
    scale = np.exp(np.mean(np.log(L)))
    a_phys = a * scale ** (-sign * b)
    r = (a_phys * L ** (sign * b) + c - y) * w
    ill = not np.isfinite(b) or b in b_range
    return ScalingFit(float(a_phys), float(b), float(c), float(np.linalg.norm(r)), L, growth, bool(ill))


# -- efficiency maps -------------------------------------------------------------

@dataclass
class EfficiencyMap:
    h_x: np.ndarray  # grid axes
    h_z: np.ndarray
    ratio_qfi_cfi: np.ndarray  # Tr[inv F_Q(h|B)] / Tr[inv F_C(h|B)], shape (n_x, n_z)
    ratio_b0_bstar: np.ndarray  # Tr[inv F_C(h|B_ref)] / Tr[inv F_C(h|B)]
    flagged: list = field(default_factory=list)  # (h_x, h_z, message); NaN in the maps

    def summary(self) -> dict:
        r = self.ratio_qfi_cfi[np.isfinite(self.ratio_qfi_cfi)]
        c = self.ratio_b0_bstar[np.isfinite(self.ratio_b0_bstar)]
        return {
            "ratio_min": float(r.min()) if r.size else math.nan,
            "ratio_max": float(r.max()) if r.size else math.nan,
            "compare_min": float(c.min()) if c.size else math.nan,
            "compare_max": float(c.max()) if c.size else math.nan,
            "compare_fraction_above_one": float(np.mean(c > 1)) if c.size else math.nan,
            "flagged": len(self.flagged),
        }


def efficiency_map(
    config: ProbeConfig,
    region: SensingRegion,
    n: int = 11,
    *,
    reference_B=(0.0, 0.0),
    step: float = 1e-4,
    method: str = "auto",
) -> EfficiencyMap:
    """QFI/CFI trace-bound ratio on an n x n grid spanning the region, using
    the control field in ``config``, plus the CFI comparison against
    ``reference_B``. Nodes where either CFI matrix cannot be inverted are
    flagged and left as NaN."""
    if region.d != 2:
        raise ValueError("efficiency maps need a two-parameter region")
    hx = np.linspace(*region.bounds(0), n)
    hz = np.linspace(*region.bounds(1), n)
    ref = config.with_control(*reference_B)
    ratio = np.full((n, n), np.nan)
    compare = np.full((n, n), np.nan)
    flagged = []
    for i, x in enumerate(hx):
        for j, z in enumerate(hz):
            h = FieldPoint(float(x), float(z))
            try:
                Q, _ = qfi_point(config, h, method=method)
                t_c = scalar_bound_trace(cfi_matrix(config, h, step, method=method))
                t_ref = scalar_bound_trace(cfi_matrix(ref, h, step, method=method))
                ratio[i, j] = scalar_bound_trace(Q) / t_c
                compare[i, j] = t_ref / t_c
            except EVALUATION_ERRORS as err:
                flagged.append((float(x), float(z), f"{type(err).__name__}: {err}"))
    return EfficiencyMap(hx, hz, ratio, compare, flagged)


# -- finite-size critical line -----------------------------------------------------

def critical_field_z(L: int, field_x: float, bracket=(1e-3, 1.5), method: str = "auto") -> float:
    """Total transverse field at which F_Q[zz] peaks for fixed total
    longitudinal field: the finite-size precursor of the critical line."""
    from scipy.optimize import minimize_scalar

    cfg = ProbeConfig(L)

    def neg_qfi(hz):
        # a (near) degenerate point counts as the worst value, F_Q = 0
        try:
            F, _ = qfi_point(cfg, FieldPoint(field_x, float(hz)), ("z",), method)
        except EVALUATION_ERRORS:
            return 0.0
        return -F.matrix[0, 0]

    zs = np.linspace(*bracket, 31)
    k = int(np.argmin([neg_qfi(z) for z in zs]))
    lo, hi = zs[max(k - 1, 0)], zs[min(k + 1, zs.size - 1)]
    res = minimize_scalar(neg_qfi, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    return float(res.x)
