"""Average-uncertainty functionals g(B) over a sensing region.

For a uniform prior the integral of f(h) / F_Q(h|B) (one parameter) or
f(h) Tr[inv(F_Q) W] (two parameters) is the mean of the integrand over the
region, evaluated here with Gauss-Legendre rules whose node count is doubled
until two successive values agree to ``rtol``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from critsense import free_fermion
from critsense.fisher import FisherMatrix, qfi_point
from critsense.spin_lattice import FieldPoint, ProbeConfig

QFI_FLOOR = 1e-12
DEFAULT_NODES = 16
MAX_NODES = 128
RTOL = 1e-3


class DivergingIntegrandError(ArithmeticError):
    def __init__(self, message: str, location):
        super().__init__(message)
        self.location = location


@dataclass(frozen=True)
class SensingRegion:
    """Per-parameter centers and widths, ordered (h_x, h_z) when d = 2."""

    centers: tuple[float, ...]
    widths: tuple[float, ...]
    prior: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(float(c) for c in np.atleast_1d(self.centers)))
        object.__setattr__(self, "widths", tuple(float(w) for w in np.atleast_1d(self.widths)))
        if len(self.centers) != len(self.widths) or len(self.centers) not in (1, 2):
            raise ValueError("region needs one or two (center, width) pairs")
        if any(w < 0 or not math.isfinite(w) for w in self.widths):
            raise ValueError("widths must be finite and non-negative")
        if not all(math.isfinite(c) for c in self.centers):
            raise ValueError("centers must be finite")
        if self.prior != "uniform":
            raise ValueError("only the uniform prior is implemented")

    @classmethod
    def single(cls, center: float, width: float) -> "SensingRegion":
        return cls((center,), (width,))

    @classmethod
    def rectangle(cls, centers, widths) -> "SensingRegion":
        return cls(tuple(centers), tuple(widths))

    @property
    def d(self) -> int:
        return len(self.centers)

    def bounds(self, axis: int) -> tuple[float, float]:
        c, w = self.centers[axis], self.widths[axis]
        return c - w / 2, c + w / 2

    def shifted(self, offsets) -> "SensingRegion":
        offsets = np.broadcast_to(np.asarray(offsets, dtype=float), (self.d,))
        return SensingRegion(tuple(np.add(self.centers, offsets)), self.widths)


@dataclass
class GlobalMetricResult:
    value: float
    nodes: np.ndarray  # (n, d) quadrature points
    weights: np.ndarray  # normalized: sum to 1
    samples: np.ndarray  # integrand at the nodes
    history: list = field(default_factory=list)  # (nodes per axis, value)
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)


def gauss_legendre(n: int, lo: float, hi: float, breakpoints: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Composite n-point rule on [lo, hi] split at interior breakpoints.

    Weights are normalized to sum to one (uniform average).
    """
    if n < 1:
        raise ValueError("need at least one node")
    if hi == lo:
        return np.array([lo]), np.array([1.0])
    cuts = [lo] + sorted(b for b in breakpoints if lo < b < hi) + [hi]
    x, w = np.polynomial.legendre.leggauss(n)
    xs, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        xs.append(0.5 * (b - a) * x + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(xs), np.concatenate(ws) / (hi - lo)


def _refine(evaluate, nodes: int, rtol: float, max_nodes: int, refine: bool):
    """Evaluate with ``nodes``, doubling until successive values agree."""
    history = []
    n = nodes
    res = evaluate(n)
    history.append((n, res[0]))
    converged = not refine
    while refine:
        if 2 * n > max_nodes:
            break
        n *= 2
        new = evaluate(n)
        history.append((n, new[0]))
        if abs(new[0] - res[0]) <= rtol * abs(new[0]):
            res = new
            converged = True
            break
        res = new
    return res, history, converged


# -- single-parameter engines -------------------------------------------------

def single_qfi_engine(config: ProbeConfig, engine="free_fermion", *, delta=None, method="auto", value=None):
    """Return ``f(h_z_array) -> F_Q`` for the transverse-field probe.

    ``engine`` is "free_fermion", "ed", "closed_form", "mock" (constant
    ``value``) or any callable taking (config, h_z array).
    """
    if callable(engine):
        return lambda hz: np.asarray(engine(config, np.asarray(hz)), dtype=float)
    if engine == "free_fermion":
        def f(hz):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                q, _ = free_fermion.susceptibility(config.B_z + np.asarray(hz), config.J, config.L, delta)
            return np.asarray(q, dtype=float)
        return f
    if engine == "closed_form":
        return lambda hz: np.asarray(free_fermion.qfi_closed_form(config.B_z + np.asarray(hz), config.J, config.L))
    if engine == "ed":
        def f(hz):
            hz = np.atleast_1d(np.asarray(hz, dtype=float))
            out = np.empty(hz.shape)
            warm = None
            for i, h in enumerate(hz.ravel()):
                F, warm = qfi_point(config, FieldPoint(0.0, float(h)), ("z",), method, warm)
                out.flat[i] = F.matrix[0, 0]
            return out
        return f
    if engine == "mock":
        if value is None:
            raise ValueError("mock engine needs a value")
        return lambda hz: np.full(np.shape(hz), float(value))
    raise ValueError(f"unknown engine {engine!r}")


def critical_points(config: ProbeConfig) -> list[float]:
    """Unknown-field values where h_z + B_z = +-J (transverse-field case)."""
    return [config.J - config.B_z, -config.J - config.B_z]


def g_single(
    config: ProbeConfig,
    region: SensingRegion,
    engine="free_fermion",
    nodes: int = DEFAULT_NODES,
    *,
    rtol: float = RTOL,
    max_nodes: int = MAX_NODES,
    refine: bool = True,
    breakpoints: Sequence[float] | None = None,
    **engine_opts,
) -> GlobalMetricResult:
    """Average of 1/F_Q(h_z|B) over the interval of ``region``.

    With the free-fermion engine the rule is split at the critical fields by
    default, where 1/F_Q has a sharp dip.
    """
    if region.d != 1:
        raise ValueError("g_single needs a one-dimensional region")
    qfi = single_qfi_engine(config, engine, **engine_opts)
    lo, hi = region.bounds(0)
    if breakpoints is None:
        breakpoints = critical_points(config) if engine in ("free_fermion", "closed_form") else ()

    def evaluate(n):
        x, w = gauss_legendre(n, lo, hi, breakpoints)
        q = qfi(x)
        bad = ~(q >= QFI_FLOOR)
        if np.any(bad):
            where = float(x[np.argmax(bad)])
            raise DivergingIntegrandError(f"F_Q below {QFI_FLOOR:g} at h_z = {where:.6g}", where)
        s = 1.0 / q
        return float(w @ s), x, w, s

    if hi == lo:
        refine = False
    (value, x, w, s), history, converged = _refine(evaluate, nodes, rtol, max_nodes, refine)
    if not converged:
        warnings.warn(f"g_single not converged to {rtol:g} with {max_nodes} nodes", RuntimeWarning, stacklevel=2)
    return GlobalMetricResult(value, x[:, None], w, s, history, converged)


# -- multi-parameter ----------------------------------------------------------

def scalar_bound_trace(F: FisherMatrix | np.ndarray, W: np.ndarray | None = None) -> float:
    """Tr[inv(F) W]: summed variance bound per measurement for W = identity."""
    if not isinstance(F, FisherMatrix):
        F = FisherMatrix(np.atleast_2d(np.asarray(F, dtype=float)), "quantum")
    inv = F.inverse()
    if W is None:
        return float(np.trace(inv))
    return float(np.trace(inv @ np.asarray(W, dtype=float)))


def check_weight_matrix(W, d: int) -> np.ndarray:
    if W is None:
        return np.eye(d)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (d, d) or not np.allclose(W, W.T) or np.linalg.eigvalsh(W)[0] <= 0:
        raise ValueError("weight matrix must be symmetric positive definite")
    return W


def multi_qfi_engine(config: ProbeConfig, engine="ed", *, method="auto", value=None):
    """Return ``f(points, warm) -> (list of FisherMatrix, first solution)``.

    The ED engine warm-starts each solve from the previous point's solution
    (the first one from ``warm``); the solution at the first point is
    returned so that a later call on nearby control fields can start there.
    """
    if callable(engine):
        return lambda pts, warm=None: ([engine(config, p) for p in pts], None)
    if engine == "mock":
        M = np.atleast_2d(np.asarray(value, dtype=float))
        return lambda pts, warm=None: ([FisherMatrix(M.copy(), "quantum") for _ in pts], None)
    if engine == "ed":
        def f(pts, warm=None):
            out, first = [], None
            for hx, hz in pts:
                F, warm = qfi_point(config, FieldPoint(hx, hz), method=method, warm=warm)
                first = warm if first is None else first
                out.append(F)
            return out, first
        return f
    raise ValueError(f"unknown engine {engine!r}")


def g_multi(
    config: ProbeConfig,
    region: SensingRegion,
    W=None,
    nodes_per_axis: int = DEFAULT_NODES,
    *,
    engine="ed",
    rtol: float = RTOL,
    max_nodes: int = MAX_NODES,
    refine: bool = True,
    threads: int = 1,
    warm_cache: dict | None = None,
    **engine_opts,
) -> GlobalMetricResult:
    """Average of Tr[inv(F_Q(h|B)) W] over the rectangle of ``region``.

    A one-dimensional region estimates h_z alone (1x1 Fisher matrices).
    ``warm_cache`` is a dict carried between calls on nearby control fields:
    it seeds the eigensolver and is updated once the evaluation finishes, so
    results do not depend on thread scheduling.
    """
    d = region.d
    W = check_weight_matrix(W, d)
    if d == 1:
        # one unknown (h_z): Tr[inv(F) W] = W / F_Q, the single-parameter case
        if engine == "mock":
            engine_opts["value"] = np.atleast_2d(np.asarray(engine_opts["value"], dtype=float))[-1, -1]
        res = g_single(config, region, engine, nodes_per_axis, rtol=rtol, max_nodes=max_nodes, refine=refine, **engine_opts)
        scale = float(W[0, 0])
        res.value *= scale
        res.samples = res.samples * scale
        res.history = [(n, v * scale) for n, v in res.history]
        return res
    row_eval = multi_qfi_engine(config, engine, **engine_opts)

    degenerate_axes = [w == 0 for w in region.widths]

    def evaluate(n):
        (xs, wx), (zs, wz) = (gauss_legendre(1 if degenerate_axes[a] else n, *region.bounds(a)) for a in range(2))
        # serpentine order keeps neighbouring solves close for warm starts
        rows = [[(x, z) for z in (zs if i % 2 == 0 else zs[::-1])] for i, x in enumerate(xs)]
        weights = np.concatenate([wx[i] * (wz if i % 2 == 0 else wz[::-1]) for i in range(len(xs))])
        start = warm_cache.get(n) if warm_cache is not None else None
        if threads > 1 and len(rows) > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(lambda r: row_eval(r, start), rows))
            mats = [m for m, _ in results]
            first = results[0][1]
        else:
            # one serpentine chain through all rows
            chain, first = row_eval([p for r in rows for p in r], start)
            sizes = np.cumsum([0] + [len(r) for r in rows])
            mats = [chain[a:b] for a, b in zip(sizes[:-1], sizes[1:])]
        if warm_cache is not None and first is not None:
            warm_cache[n] = first
        pts = np.array([p for r in rows for p in r])
        samples = np.empty(len(pts))
        conds = np.empty(len(pts))
        for i, F in enumerate(m for r in mats for m in r):
            conds[i] = F.condition()
            try:
                samples[i] = scalar_bound_trace(F, W)
            except ArithmeticError as err:
                raise type(err)(f"{err} at h = {tuple(pts[i])}", conds[i]) from err
            if not samples[i] > 0:
                raise DivergingIntegrandError(f"non-positive trace bound at h = {tuple(pts[i])}", tuple(pts[i]))
        return float(weights @ samples), pts, weights, samples, conds

    if all(degenerate_axes):
        refine = False
    (value, pts, w, s, conds), history, converged = _refine(evaluate, nodes_per_axis, rtol, max_nodes, refine)
    if not converged and refine:
        warnings.warn(f"g_multi not converged to {rtol:g} with {max_nodes} nodes per axis", RuntimeWarning, stacklevel=2)
    return GlobalMetricResult(value, pts, w, s, history, converged, {"max_condition": float(conds.max())})
