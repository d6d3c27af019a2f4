"""Periodic Ising chain in a skew field and its low-lying eigenpairs.

The Hamiltonian is

    H = J sum_i sx_i sx_{i+1} - sum_i [(B_x + h_x) sx_i + (B_z + h_z) sz_i]

on a ring of L spins. States live in the sz product basis with site 0 as the
least significant bit; bit value 0 means spin up (sz = +1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from critsense.lanczos import ConvergenceError, lanczos_lowest

DENSE_MAX_DIM = 4096
ITERATIVE_MAX_DIM = 1 << 20
DEGENERACY_TOL = 1e-10
# below this dimension "auto" uses full diagonalization
AUTO_DENSE_DIM = 256
# up to this chain length matvec uses cached sparse pieces (faster than flips)
SPARSE_MAX_L = 16


class DegenerateGroundStateError(ValueError):
    """Raised when a routine needs a unique ground state and the gap is closed."""


@dataclass(frozen=True)
class ProbeConfig:
    """Chain length, coupling and the tunable control field."""

    L: int
    J: float = 1.0
    B_x: float = 0.0
    B_z: float = 0.0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"chain length must be an integer >= 2, got {self.L}")
        if not (math.isfinite(self.J) and self.J > 0):
            raise ValueError(f"coupling J must be finite and positive, got {self.J}")
        if not (math.isfinite(self.B_x) and math.isfinite(self.B_z)):
            raise ValueError("control fields must be finite")

    def with_control(self, B_x: float | None = None, B_z: float | None = None) -> "ProbeConfig":
        return ProbeConfig(
            self.L,
            self.J,
            self.B_x if B_x is None else float(B_x),
            self.B_z if B_z is None else float(B_z),
        )


@dataclass(frozen=True)
class FieldPoint:
    """Unknown field. Single-parameter use leaves ``h_x`` at zero."""

    h_x: float = 0.0
    h_z: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.h_x) and math.isfinite(self.h_z)):
            raise ValueError("field values must be finite")

    def shifted(self, direction: str, step: float) -> "FieldPoint":
        if direction == "x":
            return FieldPoint(self.h_x + step, self.h_z)
        if direction == "z":
            return FieldPoint(self.h_x, self.h_z + step)
        raise ValueError(f"unknown direction {direction!r}")


@lru_cache(maxsize=32)
def magnetization(L: int) -> np.ndarray:
    """Total sz eigenvalue of every basis state, as floats (read-only)."""
    idx = np.arange(1 << L, dtype=np.int64)
    pop = np.zeros_like(idx)
    for i in range(L):
        pop += (idx >> i) & 1
    m = (L - 2 * pop).astype(float)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=8)
def _structure(L: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Field-independent pieces: sum_i sx_i and sum_i sx_i sx_{i+1} (periodic)."""
    n = 1 << L
    idx = np.arange(n, dtype=np.int64)
    ones = np.ones(n)
    sx = sp.csr_matrix((n, n))
    bond = sp.csr_matrix((n, n))
    for i in range(L):
        j = (i + 1) % L
        sx = sx + sp.csr_matrix((ones, (idx, idx ^ (1 << i))), shape=(n, n))
        bond = bond + sp.csr_matrix((ones, (idx, idx ^ (1 << i) ^ (1 << j))), shape=(n, n))
    return sx.tocsr(), bond.tocsr()


def _flip(psi: np.ndarray, L: int, *sites: int) -> np.ndarray:
    """View of a (2,)*L (+ trailing) tensor with the listed spins flipped."""
    return np.flip(psi, axis=tuple(L - 1 - s for s in sites))


@dataclass(frozen=True, eq=False)
class HamiltonianOperator:
    """Real symmetric operator on the 2**L amplitude space.

    ``field_x`` and ``field_z`` are the total fields B + h. No dense matrix is
    stored: up to ``SPARSE_MAX_L`` sites the product goes through cached
    field-independent sparse pieces, beyond that through axis flips of the
    amplitude tensor. ``to_dense`` exists for small chains.
    """

    L: int
    J: float
    field_x: float
    field_z: float
    _diag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_diag", -self.field_z * magnetization(self.L))

    @property
    def dim(self) -> int:
        return 1 << self.L

    @property
    def norm_bound(self) -> float:
        """Upper bound on the spectral norm: sum of absolute couplings."""
        return self.L * (abs(self.J) + abs(self.field_x) + abs(self.field_z))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        L = self.L
        if L <= SPARSE_MAX_L:
            sx, bond = _structure(L)
            diag = self._diag if v.ndim == 1 else self._diag[:, None]
            out = diag * v
            if self.J != 0.0:
                out += self.J * (bond @ v)
            if self.field_x != 0.0:
                out -= self.field_x * (sx @ v)
            return out
        return self.apply_matrix_free(v)

    def apply_matrix_free(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        L = self.L
        tail = v.shape[1:]
        psi = v.reshape((2,) * L + tail)
        out = (self._diag.reshape((-1,) + (1,) * len(tail)) * v).reshape(psi.shape)
        for i in range(L):
            if self.field_x != 0.0:
                out -= self.field_x * _flip(psi, L, i)
            if self.J != 0.0:
                # for L = 2 the wrap-around bond repeats bond (0, 1)
                out += self.J * _flip(psi, L, i, (i + 1) % L)
        return out.reshape(v.shape)

    __matmul__ = matvec

    def to_sparse(self) -> sp.csr_matrix:
        sx, bond = _structure(self.L)
        return (self.J * bond - self.field_x * sx + sp.diags(self._diag)).tocsr()

    def to_dense(self) -> np.ndarray:
        if self.dim > DENSE_MAX_DIM:
            raise ValueError(f"dense form limited to dimension {DENSE_MAX_DIM}, got {self.dim}")
        return self.to_sparse().toarray()


def build_hamiltonian(config: ProbeConfig, h: FieldPoint) -> HamiltonianOperator:
    fx = config.B_x + h.h_x
    fz = config.B_z + h.h_z
    if not (math.isfinite(fx) and math.isfinite(fz)):
        raise ValueError("non-finite total field")
    return HamiltonianOperator(int(config.L), float(config.J), float(fx), float(fz))


def derivative_operator(L: int, direction: str):
    """Return a function applying dH/dh_mu = -sum_i s^mu_i to a vector."""
    if direction == "z":
        m = magnetization(L)
        return lambda v: -m * v
    if direction == "x":
        unit = HamiltonianOperator(L, 0.0, 1.0, 0.0)
        return unit.matvec
    raise ValueError(f"unknown direction {direction!r}")


@dataclass
class EigenSolution:
    energies: np.ndarray
    states: np.ndarray  # columns are eigenvectors
    residuals: np.ndarray
    norm_bound: float
    method: str
    gap: float = math.inf  # E_1 - E_0 when known
    degenerate: bool = False
    iterations: int = 0
    excited: np.ndarray | None = None  # approximate first excited state (warm starts)

    @property
    def ground(self) -> np.ndarray:
        return self.states[:, 0]


def _fix_gauge(vec: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(vec)))
    return -vec if vec[k] < 0 else vec


def _residuals(H: HamiltonianOperator, energies, states) -> np.ndarray:
    r = H.matvec(states) - states * energies[None, :]
    return np.linalg.norm(r, axis=0)


def _pick_method(H: HamiltonianOperator, method: str) -> str:
    if method == "auto":
        return "dense" if H.dim <= AUTO_DENSE_DIM else "iterative"
    if method == "dense" and H.dim > DENSE_MAX_DIM:
        raise ValueError(f"dense method requires dimension <= {DENSE_MAX_DIM}")
    if method == "iterative" and H.dim > ITERATIVE_MAX_DIM:
        raise ValueError(f"iterative method requires dimension <= {ITERATIVE_MAX_DIM}")
    if method not in ("dense", "iterative"):
        raise ValueError(f"unknown method {method!r}")
    return method


def low_spectrum(H: HamiltonianOperator, n: int) -> EigenSolution:
    """The ``n`` lowest eigenpairs from a full dense diagonalization."""
    if not 1 <= n <= H.dim:
        raise ValueError(f"n must be in [1, {H.dim}]")
    _pick_method(H, "dense")
    evals, evecs = np.linalg.eigh(H.to_dense())
    states = np.column_stack([_fix_gauge(evecs[:, i]) for i in range(n)])
    energies = evals[:n].copy()
    gap = float(evals[1] - evals[0]) if H.dim > 1 else math.inf
    return EigenSolution(
        energies=energies,
        states=states,
        residuals=_residuals(H, energies, states),
        norm_bound=H.norm_bound,
        method="dense",
        gap=gap,
        degenerate=gap < DEGENERACY_TOL * H.norm_bound,
    )


def full_spectrum(H: HamiltonianOperator) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs (dense path), columns gauge-fixed."""
    _pick_method(H, "dense")
    evals, evecs = np.linalg.eigh(H.to_dense())
    return evals, evecs


WARM_START_NOISE = 1e-3


def _mix_random(v, dim, seed):
    if v is None:
        return None
    v = np.asarray(v, dtype=float) / np.linalg.norm(v)
    r = np.random.default_rng(seed).standard_normal(dim)
    return v + WARM_START_NOISE * r / np.linalg.norm(r)


def ground_state(
    H: HamiltonianOperator,
    method: str = "auto",
    *,
    tol: float = 1e-12,
    v0: np.ndarray | None = None,
    v0_excited: np.ndarray | None = None,
    krylov_dim: int = 200,
    max_restarts: int = 50,
    seed: int = 0,
) -> EigenSolution:
    """Lowest eigenpair, with the gap to the next level for degeneracy checks.

    ``tol`` is the target residual relative to ``H.norm_bound`` (iterative
    path). The returned amplitudes are real with the largest one positive.
    """
    method = _pick_method(H, method)
    if method == "dense":
        sol = low_spectrum(H, min(2, H.dim))
        sol.energies = sol.energies[:1]
        sol.states = sol.states[:, :1]
        sol.residuals = sol.residuals[:1]
        return sol

    scale = H.norm_bound or 1.0
    # a warm start lies (nearly) in one symmetry sector, and Krylov iteration
    # never leaves that sector; a small random admixture keeps a level
    # crossing into another sector visible
    v0 = _mix_random(v0, H.dim, seed + 2)
    v0_excited = _mix_random(v0_excited, H.dim, seed + 3)
    res0 = lanczos_lowest(
        H.matvec, H.dim, v0=v0, tol=tol * scale, krylov_dim=krylov_dim,
        max_restarts=max_restarts, seed=seed,
    )
    # second level from a deflated run; only its eigenvalue is used, so a
    # looser residual suffices
    try:
        res1 = lanczos_lowest(
            H.matvec, H.dim, v0=v0_excited, tol=max(1e-8, tol) * scale, krylov_dim=krylov_dim,
            max_restarts=max_restarts, seed=seed + 1, deflate=res0.vector[:, None],
        )
        gap, excited = res1.value - res0.value, res1.vector
    except ConvergenceError as err:
        gap = err.value - res0.value if err.value is not None else math.nan
        excited = None
    vec = _fix_gauge(res0.vector)
    energies = np.array([res0.value])
    states = vec[:, None]
    return EigenSolution(
        energies=energies,
        states=states,
        residuals=_residuals(H, energies, states),
        norm_bound=H.norm_bound,
        method="iterative",
        gap=float(gap),
        degenerate=bool(gap < DEGENERACY_TOL * H.norm_bound),
        iterations=res0.iterations,
        excited=excited,
    )
