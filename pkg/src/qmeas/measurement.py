"""POVM densities, CP instruments and the outcome statistics they induce.

Every outcome family lives on an :class:`OutcomeGrid` whose weights are the
reference-measure masses of the grid cells, so a density ``p`` integrates as
``sum(grid.weights * p)``.  Kraus operators may be rectangular
(``dim_out x dim_in``) for instruments that raise the excitation number.

All reductions are numpy sums/matmuls over label order as stored, so results
are reproducible bit-for-bit for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IncompatibleGridsError, NullEventError, PositivityViolationError
from .hilbert import dagger

CLIP_TOL = 1e-12
PROB_FLOOR = 1e-12

KINDS = ("discrete", "continuous-1d", "continuous-2d")


@dataclass(frozen=True, eq=False)
class OutcomeGrid:
    labels: np.ndarray
    weights: np.ndarray
    kind: str = "discrete"

    def __post_init__(self):
        labels = np.asarray(self.labels)
        weights = np.asarray(self.weights, dtype=float)
        if self.kind not in KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if labels.ndim != 1 or labels.shape != weights.shape:
            raise ValueError("labels and weights must be 1-d arrays of equal length")
        if np.any(weights <= 0):
            raise ValueError("grid weights must be strictly positive")
        if self.kind == "discrete" and np.any(weights != 1.0):
            raise ValueError("discrete grids carry unit weights")
        if np.unique(labels).size != labels.size:
            raise ValueError("grid labels must be unique")
        labels.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def discrete(cls, labels) -> "OutcomeGrid":
        if isinstance(labels, (int, np.integer)):
            labels = np.arange(labels)
        labels = np.asarray(labels)
        return cls(labels, np.ones(labels.shape[0]), "discrete")

    @classmethod
    def uniform(cls, lo: float, hi: float, step: float, rule: str = "trapezoid") -> "OutcomeGrid":
        """Uniform grid on [lo, hi] with trapezoid (default) or Simpson weights.

        The point count is rounded so the step divides the interval exactly;
        Simpson needs an even number of intervals and rounds up to one.
        """
        n_int = max(int(round((hi - lo) / step)), 1)
        if rule == "simpson" and n_int % 2:
            n_int += 1
        x = np.linspace(lo, hi, n_int + 1)
        h = (hi - lo) / n_int
        if rule == "trapezoid":
            w = np.full(n_int + 1, h)
            w[[0, -1]] = h / 2
        elif rule == "simpson":
            w = np.full(n_int + 1, 2 * h / 3)
            w[1::2] = 4 * h / 3
            w[[0, -1]] = h / 3
        else:
            raise ValueError(f"unknown quadrature rule {rule!r}")
        return cls(x, w, "continuous-1d")

    @classmethod
    def product(cls, re_grid: "OutcomeGrid", im_grid: "OutcomeGrid") -> "OutcomeGrid":
        """Complex grid Re x Im with product weights; labels are re + i*im, row-major in Re."""
        re, im = np.meshgrid(re_grid.labels, im_grid.labels, indexing="ij")
        wr, wi = np.meshgrid(re_grid.weights, im_grid.weights, indexing="ij")
        return cls((re + 1j * im).ravel(), (wr * wi).ravel(), "continuous-2d")

    def scaled(self, factor: float) -> "OutcomeGrid":
        """Grid of labels ``factor * x`` with the pushed-forward Lebesgue weights."""
        jac = abs(factor) ** (2 if self.kind == "continuous-2d" else 1)
        if self.kind == "discrete":
            raise ValueError("discrete grids cannot be rescaled")
        return OutcomeGrid(self.labels * factor, self.weights * jac, self.kind)

    def with_weights(self, weights) -> "OutcomeGrid":
        return OutcomeGrid(self.labels, weights, self.kind)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def same_as(self, other: "OutcomeGrid") -> bool:
        return (
            self is other
            or (
                self.kind == other.kind
                and len(self) == len(other)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.weights, other.weights)
            )
        )

    def index(self, label) -> int:
        hits = np.flatnonzero(self.labels == label)
        if hits.size == 0:
            hits = np.flatnonzero(np.isclose(self.labels, label, rtol=0, atol=1e-12))
        if hits.size != 1:
            raise KeyError(f"label {label!r} not on grid")
        return int(hits[0])

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class PovmDensity:
    """Effect densities on a grid.

    ``effects`` has shape (K, d, d), or (K, d) with ``diagonal=True`` for
    effects diagonal in the computational basis (stored compactly).  Rank-one
    families may also pass ``vectors`` (K, d) with E_x = v_x v_x^dag; densities
    are then evaluated as squared moduli and cannot go negative by rounding.
    """

    grid: OutcomeGrid
    effects: np.ndarray
    diagonal: bool = False
    name: str = ""
    vectors: np.ndarray | None = None

    @classmethod
    def rank_one(cls, grid: OutcomeGrid, vectors, name: str = "") -> "PovmDensity":
        v = np.asarray(vectors, dtype=complex)
        return cls(grid, np.einsum("xi,xj->xij", v, v.conj()), name=name, vectors=v)

    def __post_init__(self):
        eff = np.asarray(self.effects)
        want = 2 if self.diagonal else 3
        if eff.ndim != want or eff.shape[0] != len(self.grid):
            raise ValueError(f"effects must have shape (K, d{', d' if not self.diagonal else ''}) with K = grid size")
        object.__setattr__(self, "effects", eff)

    @property
    def dim(self) -> int:
        return self.effects.shape[-1]

    def dense(self, i: int) -> np.ndarray:
        e = self.effects[i]
        return np.diag(e).astype(complex) if self.diagonal else e

    def dense_effects(self) -> np.ndarray:
        if not self.diagonal:
            return self.effects
        d = self.dim
        out = np.zeros((len(self.grid), d, d), dtype=complex)
        out[:, np.arange(d), np.arange(d)] = self.effects
        return out

    def expectations(self, rho: np.ndarray) -> np.ndarray:
        """Raw tr[rho E_x] for every label (real part)."""
        rho = np.asarray(rho)
        if self.diagonal:
            return self.effects.real @ np.diag(rho).real
        if self.vectors is not None:
            return np.sum(np.abs(self.vectors.conj() @ psd_factor(rho)) ** 2, axis=1)
        # tr[rho E] = sum_ij rho_ji E_ij
        flat = self.effects.reshape(len(self.grid), -1)
        return (flat @ rho.T.reshape(-1)).real

    def total(self) -> np.ndarray:
        """sum_x w(x) E_x as a dense operator."""
        if self.diagonal:
            return np.diag(self.grid.weights @ self.effects).astype(complex)
        return np.tensordot(self.grid.weights, self.effects, axes=1)


@dataclass(frozen=True, eq=False)
class KrausInstrument:
    """Outcome-indexed CP maps; ``kraus`` has shape (K, Z, d_out, d_in)."""

    grid: OutcomeGrid
    kraus: np.ndarray
    name: str = ""

    def __post_init__(self):
        k = np.asarray(self.kraus, dtype=complex)
        if k.ndim == 3:
            k = k[:, None]
        if k.ndim != 4 or k.shape[0] != len(self.grid):
            raise ValueError("kraus must have shape (K, Z, d_out, d_in) with K = grid size")
        object.__setattr__(self, "kraus", k)

    @property
    def dim_in(self) -> int:
        return self.kraus.shape[-1]

    @property
    def dim_out(self) -> int:
        return self.kraus.shape[-2]

    def effects(self) -> np.ndarray:
        """E^Y_y = sum_z M_yz^dag M_yz, shape (K, d_in, d_in)."""
        return np.einsum("yzki,yzkj->yij", self.kraus.conj(), self.kraus)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Unnormalized post-measurement operators E_y(rho), shape (K, d_out, d_out)."""
        m = self.kraus
        return np.einsum("yzij,jk,yzlk->yil", m, rho, m.conj(), optimize=True)


@dataclass(frozen=True, eq=False)
class Distribution:
    grid: OutcomeGrid
    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        if d.shape != (len(self.grid),):
            raise ValueError("density must have one value per grid label")
        object.__setattr__(self, "density", d)

    @property
    def mass(self) -> float:
        return float(self.grid.weights @ self.density)

    def probabilities(self) -> np.ndarray:
        """Cell masses w(x) p(x)."""
        return self.grid.weights * self.density

    def expect(self, f) -> float:
        return float(self.probabilities() @ f(self.grid.labels))


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Density over (x, y); ``density[i, j]`` pairs x-label i with y-label j."""

    x_grid: OutcomeGrid
    y_grid: OutcomeGrid
    density: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        if d.shape != (len(self.x_grid), len(self.y_grid)):
            raise ValueError("joint density shape must be (len(x_grid), len(y_grid))")
        object.__setattr__(self, "density", d)

    def marginal_x(self) -> Distribution:
        return Distribution(self.x_grid, self.density @ self.y_grid.weights)

    def marginal_y(self) -> Distribution:
        return Distribution(self.y_grid, self.x_grid.weights @ self.density)

    @property
    def mass(self) -> float:
        return float(self.x_grid.weights @ self.density @ self.y_grid.weights)


def _clip(values: np.ndarray, clip_tol: float, weights: np.ndarray | None = None) -> np.ndarray:
    """Zero out rounding negatives; the tolerance applies to cell masses w * p."""
    mass = values if weights is None else values * weights
    low = mass.min() if mass.size else 0.0
    if low < -clip_tol:
        raise PositivityViolationError(f"probability mass {low:.3e} below -clip_tol={clip_tol:.1e}")
    return np.where(values < 0, 0.0, values)


def povm_distribution(rho: np.ndarray, povm: PovmDensity, clip_tol: float = CLIP_TOL) -> Distribution:
    """p(x) = tr[rho E_x] on the POVM's grid."""
    return Distribution(povm.grid, _clip(povm.expectations(rho), clip_tol, povm.grid.weights))


def instrument_povm(inst: KrausInstrument) -> PovmDensity:
    return PovmDensity(inst.grid, inst.effects(), name=f"{inst.name}:povm")


def instrument_distribution(rho: np.ndarray, inst: KrausInstrument, clip_tol: float = CLIP_TOL) -> Distribution:
    """p^Y(y) = tr[E_y(rho)] = tr[rho E^Y_y]."""
    vals = _output_diagonals(rho, inst).sum(axis=1)
    return Distribution(inst.grid, _clip(vals, clip_tol, inst.grid.weights))


def psd_factor(rho: np.ndarray) -> np.ndarray:
    """L with L L^dag = rho, negative rounding eigenvalues dropped."""
    w, v = np.linalg.eigh(0.5 * (rho + np.conj(rho).T))
    keep = w > 0
    return v[:, keep] * np.sqrt(w[keep])


def _output_diagonals(rho: np.ndarray, inst: KrausInstrument) -> np.ndarray:
    """Diagonals of E_y(rho), shape (K, d_out), as sums of squared moduli."""
    b = inst.kraus @ psd_factor(np.asarray(rho, dtype=complex))  # (K, Z, d_out, r)
    return np.sum(np.abs(b) ** 2, axis=(1, 3))


def _label_index(grid: OutcomeGrid, y) -> int:
    if isinstance(y, (int, np.integer)) and grid.kind == "discrete" and not np.issubdtype(grid.labels.dtype, np.integer):
        return int(y)
    return grid.index(y)


def post_state(rho: np.ndarray, inst: KrausInstrument, y, prob_floor: float = PROB_FLOOR) -> np.ndarray:
    """rho_y = E_y(rho) / p^Y(y) for the outcome with label ``y``."""
    i = _label_index(inst.grid, y)
    m = inst.kraus[i]
    op = np.einsum("zij,jk,zlk->il", m, rho, m.conj())
    p = float(np.trace(op).real)
    if p <= prob_floor:
        raise NullEventError(f"outcome {y!r} has probability {p:.3e} <= {prob_floor:.1e}")
    op = op / p
    return 0.5 * (op + op.conj().T)


def heisenberg_adjoint(inst: KrausInstrument, y, effect: np.ndarray) -> np.ndarray:
    """E_y^dag(A) = sum_z M_yz^dag A M_yz."""
    m = inst.kraus[_label_index(inst.grid, y)]
    return np.einsum("zki,kl,zlj->ij", m.conj(), effect, m)


def heisenberg_adjoint_all(inst: KrausInstrument, effect: np.ndarray) -> np.ndarray:
    """E_y^dag(A) for every outcome, shape (K, d_in, d_in)."""
    return np.einsum("yzki,kl,yzlj->yij", inst.kraus.conj(), effect, inst.kraus, optimize=True)


def joint_successive_distribution(
    rho: np.ndarray,
    inst: KrausInstrument,
    povmX: PovmDensity,
    povmX_out: PovmDensity | None = None,
    clip_tol: float = CLIP_TOL,
) -> JointDistribution:
    """p~(x, y) = tr[E_y(rho) E_x] for Y followed by X.

    ``povmX_out`` is the X readout on the instrument's output space; it defaults
    to ``povmX`` and is needed only when the instrument changes dimension.
    """
    readout = povmX if povmX_out is None else povmX_out
    if readout.dim != inst.dim_out:
        raise ValueError(f"readout POVM acts on dim {readout.dim}, instrument outputs dim {inst.dim_out}")
    if readout.diagonal:
        vals = readout.effects.real @ _output_diagonals(rho, inst).T
    elif readout.vectors is not None:
        b = inst.kraus @ psd_factor(np.asarray(rho, dtype=complex))  # (Ky, Z, d, r)
        amp = np.einsum("xi,yzir->xyzr", readout.vectors.conj(), b, optimize=True)
        vals = np.sum(np.abs(amp) ** 2, axis=(2, 3))
    else:
        ops = inst.apply(rho)  # (Ky, d, d)
        k_x = len(readout.grid)
        vals = (readout.effects.reshape(k_x, -1) @ np.swapaxes(ops, 1, 2).reshape(ops.shape[0], -1).T).real
    return JointDistribution(
        readout.grid, inst.grid, _clip(vals, clip_tol, np.outer(readout.grid.weights, inst.grid.weights))
    )


def _restrict(op: np.ndarray, keep: int) -> np.ndarray:
    return op[:keep, :keep]


def completeness_residual(obj, guard: int = 0) -> float:
    """Spectral norm of (sum_x w E_x - I) on the span of the first d - guard basis states."""
    if isinstance(obj, KrausInstrument):
        total = np.tensordot(obj.grid.weights, obj.effects(), axes=1)
    elif isinstance(obj, PovmDensity):
        total = obj.total()
    else:
        raise TypeError(f"expected PovmDensity or KrausInstrument, got {type(obj).__name__}")
    keep = max(total.shape[0] - guard, 1)
    diff = _restrict(total, keep) - np.eye(keep)
    return float(np.linalg.norm(diff, 2))


def check_same_grid(a: OutcomeGrid, b: OutcomeGrid) -> None:
    if not a.same_as(b):
        raise IncompatibleGridsError("distributions live on different outcome grids")
