"""Strip maps and pulled-back metric coefficients.

The moving domain is flattened onto two fixed reference strips,
upper = S^1 x (-1, 0) and lower = S^1 x (-2, -1), by the vertical shift map
psi = (x1, x2 + delta_psi) where delta_psi solves Laplace's equation in each
strip with the interface trace h, the permeability-curve trace f, and zero on
the floor as Dirichlet data.  From delta_psi we assemble the Jacobian
J = 1 + delta_psi,2, the inverse-gradient matrix A, and the pulled-back Darcy
conductivity K = beta * J * A * A^T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DiffeoDegenerate, ResolutionMismatch
from .spectral_core import PeriodicField1D, x1_derivative

__all__ = [
    "UPPER",
    "LOWER",
    "StripGrid",
    "StripField",
    "PermeabilityProfile",
    "harmonic_extension",
    "vertical_derivative_exact",
    "vertical_derivative",
    "MetricPack",
    "assemble_metric",
    "metric_terms",
    "nonlinear_gap",
    "piola_divergence",
    "laplacian_residual",
    "DEFAULT_J_MIN",
]

UPPER = "upper"
LOWER = "lower"

# vertical extent of each reference strip: (bottom, top)
_STRIP_BOUNDS = {UPPER: (-1.0, 0.0), LOWER: (-2.0, -1.0)}

DEFAULT_J_MIN = 0.1


@dataclass(frozen=True)
class StripGrid:
    """Tensor grid on one reference strip, inclusive of both boundaries."""

    strip: str
    n1: int
    n2: int

    def __post_init__(self):
        if self.strip not in _STRIP_BOUNDS:
            raise ValueError(f"strip must be '{UPPER}' or '{LOWER}', got {self.strip!r}")
        if self.n1 < 4 or self.n1 % 2 != 0:
            raise ValueError("n1 must be even and >= 4")
        if self.n2 < 3:
            raise ValueError("n2 must be >= 3")

    @property
    def bounds(self) -> tuple[float, float]:
        return _STRIP_BOUNDS[self.strip]

    @property
    def dx2(self) -> float:
        return 1.0 / (self.n2 - 1)

    @property
    def x2(self) -> np.ndarray:
        bottom, top = self.bounds
        return np.linspace(bottom, top, self.n2)

    @property
    def dx1(self) -> float:
        return 2.0 * np.pi / self.n1


@dataclass
class StripField:
    """Real samples on a strip grid; values[j, m] = field(x1_j, x2_m)."""

    grid: StripGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n1, self.grid.n2):
            raise ResolutionMismatch(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.n1}, {self.grid.n2})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("strip field values must be finite")

    @classmethod
    def zeros(cls, grid: StripGrid) -> "StripField":
        return cls(grid, np.zeros((grid.n1, grid.n2)))


@dataclass
class PermeabilityProfile:
    """Permeability-curve height offset f and the two conductivities."""

    f: PeriodicField1D
    beta_plus: float
    beta_minus: float

    def __post_init__(self):
        if not (self.beta_plus > 0 and self.beta_minus > 0):
            raise ValueError("permeabilities must be positive")
        if float(np.min(self.f.values)) <= -1.0:
            raise ValueError("permeability curve touches the floor: need min f > -1")

    def beta(self, strip: str) -> float:
        return self.beta_plus if strip == UPPER else self.beta_minus


def _strip_traces(h: PeriodicField1D, f: PeriodicField1D, grid: StripGrid):
    """Dirichlet data (bottom, top) for the shift equation on one strip."""
    if grid.strip == UPPER:
        return f.coeffs, h.coeffs
    return np.zeros(grid.n1 // 2 + 1, dtype=complex), f.coeffs


def _sinh_ratio(k: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """sinh(k xi)/sinh(k) for k >= 1, 0 <= xi <= 1, in overflow-safe form."""
    kk = k[:, None]
    xx = xi[None, :]
    return np.exp(kk * (xx - 1.0)) * (1.0 - np.exp(-2.0 * kk * xx)) / (
        1.0 - np.exp(-2.0 * kk)
    )


def _cosh_over_sinh(k: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """cosh(k xi)/sinh(k) for k >= 1, 0 <= xi <= 1, overflow-safe."""
    kk = k[:, None]
    xx = xi[None, :]
    return np.exp(kk * (xx - 1.0)) * (1.0 + np.exp(-2.0 * kk * xx)) / (
        1.0 - np.exp(-2.0 * kk)
    )


def _extension_profiles(grid: StripGrid, derivative: bool):
    """Per-mode vertical profiles multiplying the top and bottom traces."""
    k = np.arange(1, grid.n1 // 2 + 1, dtype=float)
    bottom, _ = grid.bounds
    xi = grid.x2 - bottom  # in [0, 1]
    if not derivative:
        top = _sinh_ratio(k, xi)
        bot = _sinh_ratio(k, 1.0 - xi)
        top0 = xi
        bot0 = 1.0 - xi
    else:
        top = k[:, None] * _cosh_over_sinh(k, xi)
        bot = -k[:, None] * _cosh_over_sinh(k, 1.0 - xi)
        top0 = np.ones_like(xi)
        bot0 = -np.ones_like(xi)
    return top0, bot0, top, bot


def _extend(h: PeriodicField1D, f: PeriodicField1D, grid: StripGrid,
            derivative: bool) -> StripField:
    if h.n != grid.n1 or f.n != grid.n1:
        raise ResolutionMismatch(
            f"trace resolution ({h.n}, {f.n}) does not match grid n1={grid.n1}"
        )
    bot_tr, top_tr = _strip_traces(h, f, grid)
    top0, bot0, top, bot = _extension_profiles(grid, derivative)
    coeffs = np.empty((grid.n1 // 2 + 1, grid.n2), dtype=complex)
    coeffs[0] = top_tr[0] * top0 + bot_tr[0] * bot0
    coeffs[1:] = top_tr[1:, None] * top + bot_tr[1:, None] * bot
    values = np.fft.irfft(coeffs * grid.n1, n=grid.n1, axis=0)
    return StripField(grid, values)


def harmonic_extension(h: PeriodicField1D, f: PeriodicField1D,
                       grid: StripGrid) -> StripField:
    """Solve Laplace's equation in the strip with the boundary traces.

    Upper strip: value h on the interface line x2 = 0, f on the permeability
    line x2 = -1.  Lower strip: f on x2 = -1, zero on the floor x2 = -2.
    Each Fourier mode k != 0 is solved exactly in the sinh basis (evaluated in
    an overflow-safe scaled form); the k = 0 mode is the linear interpolant of
    the boundary means.  Values are sampled on the grid's x2 levels.
    """
    return _extend(h, f, grid, derivative=False)


def vertical_derivative_exact(h: PeriodicField1D, f: PeriodicField1D,
                              grid: StripGrid) -> StripField:
    """Analytic x2-derivative of the harmonic extension on the grid levels."""
    return _extend(h, f, grid, derivative=True)


def vertical_derivative(values: np.ndarray, dx2: float) -> np.ndarray:
    """x2-derivative along axis 1: centered interior, one-sided 2nd order at
    the strip boundaries."""
    out = np.empty_like(values)
    out[:, 1:-1] = (values[:, 2:] - values[:, :-2]) / (2.0 * dx2)
    out[:, 0] = (-3.0 * values[:, 0] + 4.0 * values[:, 1] - values[:, 2]) / (2.0 * dx2)
    out[:, -1] = (3.0 * values[:, -1] - 4.0 * values[:, -2] + values[:, -3]) / (2.0 * dx2)
    return out


@dataclass
class MetricPack:
    """Pulled-back geometry of one strip.

    J = 1 + delta_psi,2 pointwise; A = (1/J) [[J, 0], [-delta_psi,1, 1]];
    K = beta J A A^T = beta [[J, -d1], [-d1, (1 + d1^2)/J]], symmetric and
    positive definite wherever J > 0.
    """

    grid: StripGrid
    beta: float
    delta_psi: StripField
    d1: np.ndarray
    d2: np.ndarray
    J: np.ndarray
    k11: np.ndarray
    k12: np.ndarray
    k22: np.ndarray

    @property
    def a21(self) -> np.ndarray:
        return -self.d1 / self.J

    @property
    def a22(self) -> np.ndarray:
        return 1.0 / self.J

    def A_matrix(self) -> np.ndarray:
        """Inverse-gradient matrix as an (n1, n2, 2, 2) array."""
        n1, n2 = self.J.shape
        a = np.zeros((n1, n2, 2, 2))
        a[..., 0, 0] = 1.0
        a[..., 1, 0] = self.a21
        a[..., 1, 1] = self.a22
        return a

    def K_matrix(self) -> np.ndarray:
        """Conductivity tensor as an (n1, n2, 2, 2) array."""
        n1, n2 = self.J.shape
        k = np.empty((n1, n2, 2, 2))
        k[..., 0, 0] = self.k11
        k[..., 0, 1] = self.k12
        k[..., 1, 0] = self.k12
        k[..., 1, 1] = self.k22
        return k


def assemble_metric(grid: StripGrid, beta: float, delta_psi: StripField,
                    d1: np.ndarray, d2: np.ndarray,
                    j_min: float = DEFAULT_J_MIN) -> MetricPack:
    """Assemble J, A, K pointwise from the shift gradient."""
    J = 1.0 + d2
    if float(np.min(J)) <= j_min:
        raise DiffeoDegenerate(
            f"strip map degenerate on {grid.strip} strip: min J = {np.min(J):.4g} "
            f"<= j_min = {j_min:.4g}"
        )
    k11 = beta * J
    k12 = -beta * d1
    k22 = beta * (1.0 + d1 * d1) / J
    return MetricPack(grid, float(beta), delta_psi, d1, d2, J, k11, k12, k22)


def metric_terms(delta_psi: StripField, profile: PermeabilityProfile,
                 j_min: float = DEFAULT_J_MIN,
                 d2_values: np.ndarray | None = None) -> MetricPack:
    """Gradient of the shift and the metric coefficients of one strip.

    d1 is the spectral x1-derivative per level; d2 uses finite differences of
    the grid values (not the analytic mode derivative) so the downstream
    discrete identities hold in the same calculus as the head solver.  Pass
    d2_values to override with the analytic derivative where wanted.
    """
    grid = delta_psi.grid
    d1 = x1_derivative(delta_psi.values)
    d2 = vertical_derivative(delta_psi.values, grid.dx2) if d2_values is None \
        else np.asarray(d2_values, dtype=float)
    return assemble_metric(grid, profile.beta(grid.strip), delta_psi, d1, d2, j_min)


def nonlinear_gap(pack: MetricPack) -> np.ndarray:
    """Pointwise Id - (grad psi)^T grad psi / J as an (n1, n2, 2, 2) array.

    Vanishes identically for the identity map; equals 1/J times the matrix
    [[d2 - d1^2, -d1 J], [-d1 J, -d2 J]].
    """
    n1, n2 = pack.J.shape
    gap = np.empty((n1, n2, 2, 2))
    gap[..., 0, 0] = (pack.d2 - pack.d1 ** 2) / pack.J
    gap[..., 0, 1] = -pack.d1
    gap[..., 1, 0] = -pack.d1
    gap[..., 1, 1] = -pack.d2
    return gap


def piola_divergence(pack: MetricPack) -> tuple[np.ndarray, np.ndarray]:
    """Discrete divergence (J A^k_i),_k for i = 1, 2, using the pack's own
    stencils (spectral in x1, one-sided/centered differences in x2)."""
    res1 = x1_derivative(pack.J) + vertical_derivative(-pack.d1, pack.grid.dx2)
    ja12 = np.zeros_like(pack.J)
    ja22 = np.ones_like(pack.J)
    res2 = x1_derivative(ja12) + vertical_derivative(ja22, pack.grid.dx2)
    return res1, res2


def laplacian_residual(field: StripField) -> np.ndarray:
    """Interior residual of the discrete Laplacian (spectral x1, centered x2)."""
    v = field.values
    dx2 = field.grid.dx2
    d11 = x1_derivative(v, order=2)
    d22 = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / dx2 ** 2
    return d11[:, 1:-1] + d22
