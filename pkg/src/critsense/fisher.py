"""Quantum and classical Fisher information for Ising ground states.

Ground-state derivatives come from first-order perturbation theory, either
as an explicit sum over the dense spectrum or, for larger chains, by solving
the equivalent linear-response equation

    (H - E_0) Q |dPhi> = -Q dH |Phi>,   Q = 1 - |Phi><Phi|

with MINRES. A gauge-aligned central difference provides the independent
path used to cross-check both.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as sla

from critsense.spin_lattice import (
    AUTO_DENSE_DIM,
    DENSE_MAX_DIM,
    DegenerateGroundStateError,
    EigenSolution,
    FieldPoint,
    ProbeConfig,
    build_hamiltonian,
    derivative_operator,
    full_spectrum,
    ground_state,
    magnetization,
)

GAP_TOL = 1e-8
P_FLOOR = 1e-12
CONDITION_MAX = 1e12
DIRECTIONS = ("x", "z")


class SingularFisherError(ArithmeticError):
    """Fisher matrix too ill-conditioned to invert."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


@dataclass
class FisherMatrix:
    matrix: np.ndarray
    kind: str  # "quantum" or "classical"
    directions: tuple[str, ...] = DIRECTIONS
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def is_psd(self, rtol: float = 1e-8) -> bool:
        ev = np.linalg.eigvalsh(self.matrix)
        return bool(ev[0] >= -rtol * max(abs(ev[-1]), 1e-300))

    def condition(self) -> float:
        ev = np.abs(np.linalg.eigvalsh(self.matrix))
        return math.inf if ev[0] == 0 else float(ev[-1] / ev[0])

    def inverse(self) -> np.ndarray:
        """Inverse, closed form for 1x1 and 2x2, refusing near-singular input."""
        F = self.matrix
        cond = self.condition()
        if not cond <= CONDITION_MAX:
            raise SingularFisherError(f"{self.kind} Fisher matrix is near singular (condition {cond:.3e})", cond)
        if self.dim == 1:
            return np.array([[1.0 / F[0, 0]]])
        if self.dim == 2:
            det = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
            return np.array([[F[1, 1], -F[0, 1]], [-F[1, 0], F[0, 0]]]) / det
        return np.linalg.inv(F)


@dataclass
class OutcomeDistribution:
    outcomes: np.ndarray  # magnetization values, descending from +L
    probabilities: np.ndarray


def _require_normalized(phi: np.ndarray) -> None:
    if abs(np.linalg.norm(phi) - 1.0) > 1e-10:
        raise ValueError("state is not normalized")


def _check_gap(sol: EigenSolution, where: str) -> None:
    if sol.degenerate or not sol.gap > GAP_TOL * sol.norm_bound:
        raise DegenerateGroundStateError(
            f"ground state at {where} is (near) degenerate: gap {sol.gap:.3e}, "
            f"norm bound {sol.norm_bound:.3e}"
        )


def _solve_ground(config: ProbeConfig, h: FieldPoint, method: str, warm: EigenSolution | None = None) -> tuple:
    H = build_hamiltonian(config, h)
    sol = ground_state(H, method, **_warm_kwargs(warm))
    _check_gap(sol, f"h=({h.h_x}, {h.h_z}), B=({config.B_x}, {config.B_z})")
    return H, sol


def _warm_kwargs(warm: EigenSolution | None) -> dict:
    if warm is None or warm.method != "iterative":
        return {}
    return {"v0": warm.ground, "v0_excited": warm.excited}


def _pt_dense(H, directions):
    evals, evecs = full_spectrum(H)
    gap = evals[1] - evals[0]
    if gap <= GAP_TOL * H.norm_bound:
        raise DegenerateGroundStateError(f"ground state is (near) degenerate: gap {gap:.3e}")
    phi = evecs[:, 0]
    k = int(np.argmax(np.abs(phi)))
    if phi[k] < 0:
        phi = -phi
    out = []
    for d in directions:
        coeff = evecs.T @ derivative_operator(H.L, d)(phi)
        coeff[0] = 0.0
        coeff[1:] /= evals[0] - evals[1:]
        out.append(evecs @ coeff)
    return phi, out


def _pt_linear_response(H, sol: EigenSolution, directions, rtol=1e-11):
    phi = sol.ground
    e0 = sol.energies[0]

    def apply(v):
        v = v - phi * (phi @ v)
        w = H.matvec(v) - e0 * v
        return w - phi * (phi @ w)

    op = sla.LinearOperator((H.dim, H.dim), matvec=apply, dtype=float)
    out = []
    for d in directions:
        rhs = derivative_operator(H.L, d)(phi)
        rhs = rhs - phi * (phi @ rhs)
        if not np.any(rhs):
            out.append(np.zeros_like(phi))
            continue
        x, info = sla.minres(op, -rhs, rtol=rtol, maxiter=20 * H.dim)
        if info != 0:
            raise ArithmeticError(f"linear-response solve did not converge (info={info})")
        out.append(x - phi * (phi @ x))
    return phi, out


def ground_and_derivatives(
    config: ProbeConfig,
    h: FieldPoint,
    directions=DIRECTIONS,
    method: str = "auto",
    warm: EigenSolution | None = None,
) -> tuple[np.ndarray, list[np.ndarray], EigenSolution | None]:
    """Ground state, its first-order derivatives along ``directions``, and the
    iterative eigensolution (``None`` on the dense path) for warm starts."""
    H = build_hamiltonian(config, h)
    if method == "auto":
        method = "dense" if H.dim <= AUTO_DENSE_DIM else "iterative"
    if method == "dense":
        if H.dim > DENSE_MAX_DIM:
            raise ValueError(f"dense perturbation theory requires dimension <= {DENSE_MAX_DIM}")
        return (*_pt_dense(H, directions), None)
    sol = ground_state(H, "iterative", **_warm_kwargs(warm))
    _check_gap(sol, f"h=({h.h_x}, {h.h_z}), B=({config.B_x}, {config.B_z})")
    return (*_pt_linear_response(H, sol, directions), sol)


def state_derivative_pt(config: ProbeConfig, h: FieldPoint, direction: str, method: str = "dense") -> np.ndarray:
    """d|Phi>/dh_direction by first-order perturbation theory (orthogonal to |Phi>)."""
    _, (d,), _ = ground_and_derivatives(config, h, (direction,), method)
    return d


def _aligned(vec: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return -vec if vec @ ref < 0 else vec


def state_derivative_fd(
    config: ProbeConfig, h: FieldPoint, direction: str, step: float = 1e-5, method: str = "auto"
) -> np.ndarray:
    """Central difference of gauge-aligned ground states at h +- step."""
    _, center = _solve_ground(config, h, method)
    phi = center.ground
    _, plus = _solve_ground(config, h.shifted(direction, step), method, center)
    _, minus = _solve_ground(config, h.shifted(direction, -step), method, center)
    return (_aligned(plus.ground, phi) - _aligned(minus.ground, phi)) / (2 * step)


def qfi_matrix_pure(phi: np.ndarray, *derivatives: np.ndarray) -> FisherMatrix:
    """4 Re[<d_mu Phi|d_nu Phi> - <d_mu Phi|Phi><Phi|d_nu Phi>]."""
    phi = np.asarray(phi)
    _require_normalized(phi)
    D = np.column_stack(derivatives)
    berry = phi.conj() @ D
    F = 4 * np.real(D.conj().T @ D - np.outer(berry.conj(), berry))
    F = 0.5 * (F + F.T)
    dirs = DIRECTIONS if len(derivatives) == 2 else ("z",)
    return FisherMatrix(F, "quantum", dirs)


def qfi_point(
    config: ProbeConfig, h: FieldPoint, directions=DIRECTIONS, method: str = "auto", warm=None
) -> tuple[FisherMatrix, EigenSolution | None]:
    """QFI matrix at one field point; also returns the eigensolution for warm starts."""
    phi, ds, sol = ground_and_derivatives(config, h, directions, method, warm)
    F = qfi_matrix_pure(phi, *ds)
    F.directions = tuple(directions)
    return F, sol


def magnetization_distribution(phi: np.ndarray) -> OutcomeDistribution:
    phi = np.asarray(phi)
    _require_normalized(phi)
    L = int(round(math.log2(phi.size)))
    m = magnetization(L)
    # outcome index j <-> magnetization L - 2j
    index = ((L - m) / 2).astype(np.int64)
    p = np.bincount(index, weights=np.abs(phi) ** 2, minlength=L + 1)
    return OutcomeDistribution(outcomes=L - 2.0 * np.arange(L + 1), probabilities=p)


def _cfi_from(p: np.ndarray, dp: np.ndarray, p_floor: float) -> tuple[np.ndarray, float]:
    keep = p >= p_floor
    if not np.any(keep):
        raise ArithmeticError("every outcome probability is below the floor")
    F = (dp[:, keep] / p[keep]) @ dp[:, keep].T
    return 0.5 * (F + F.T), float(p[~keep].sum())


def cfi_matrix(
    config: ProbeConfig,
    h: FieldPoint,
    step: float = 1e-4,
    directions=DIRECTIONS,
    method: str = "auto",
    p_floor: float = P_FLOOR,
    *,
    check_step: bool = False,
    warm: EigenSolution | None = None,
) -> FisherMatrix:
    """Classical Fisher information of the total-magnetization measurement.

    Probability derivatives are central differences with ``step`` (in units
    of J); outcomes with p < ``p_floor`` are left out and their mass is
    reported in ``meta["excluded_mass"]``. With ``check_step`` the matrix is
    recomputed at half the step and a warning is issued if the two differ by
    more than 1% (the relative change is stored in ``meta["step_change"]``).
    """
    step = step * config.J
    _, center = _solve_ground(config, h, method, warm)
    phi = center.ground
    p = magnetization_distribution(phi).probabilities

    def derivatives(s):
        dp = []
        for d in directions:
            _, plus = _solve_ground(config, h.shifted(d, s), method, center)
            _, minus = _solve_ground(config, h.shifted(d, -s), method, center)
            p_plus = magnetization_distribution(plus.ground).probabilities
            p_minus = magnetization_distribution(minus.ground).probabilities
            dp.append((p_plus - p_minus) / (2 * s))
        return np.array(dp)

    F, excluded = _cfi_from(p, derivatives(step), p_floor)
    meta = {"excluded_mass": excluded, "step": step, "solution": center}
    if check_step:
        F_half, _ = _cfi_from(p, derivatives(0.5 * step), p_floor)
        change = float(np.linalg.norm(F - F_half) / max(np.linalg.norm(F_half), 1e-300))
        meta["step_change"] = change
        warn_if_step_sensitive(change, "classical Fisher information")
    return FisherMatrix(F, "classical", tuple(directions), meta)


def cfi_matrix_analytic(
    config: ProbeConfig, h: FieldPoint, directions=DIRECTIONS, method: str = "auto", p_floor: float = P_FLOOR, warm=None
) -> tuple[FisherMatrix, FisherMatrix, EigenSolution | None]:
    """CFI from exact probability derivatives dp_m = 2 sum_{s in m} phi_s dphi_s.

    Returns (QFI, CFI, eigensolution) from a single perturbative solve.
    """
    phi, ds, sol = ground_and_derivatives(config, h, directions, method, warm)
    L = config.L
    index = ((L - magnetization(L)) / 2).astype(np.int64)
    p = np.bincount(index, weights=phi**2, minlength=L + 1)
    dp = np.array([np.bincount(index, weights=2 * phi * d, minlength=L + 1) for d in ds])
    F, excluded = _cfi_from(p, dp, p_floor)
    Q = qfi_matrix_pure(phi, *ds)
    Q.directions = tuple(directions)
    return Q, FisherMatrix(F, "classical", tuple(directions), {"excluded_mass": excluded}), sol


def warn_if_step_sensitive(change: float, what: str, rtol: float = 0.01) -> None:
    """Warn when halving a finite-difference step moved a result by more than ``rtol``."""
    if change > rtol:
        warnings.warn(f"{what}: step-halving changed the estimate by {change:.2%}", RuntimeWarning, stacklevel=3)
