"""Grid model of a two-chamber cavity with a slit barrier and a pixel screen.

Layout (2D shown; a third axis is handled by the same code path)::

    x = 0 (gun face, Dirichlet)                   x = max (screen, Neumann)
      |  gun chamber  | wall |   screen chamber   |
      |     psi0      |  ::  |                    | pixels

Grid point ``(ix, iy, ...)`` sits at physical position ``((ix+1) h, (iy+1) h, ...)``.
The Dirichlet faces are ghost points just outside the grid; the screen face
uses a cell-centred mirror closure so the Hamiltonian stays symmetric.  Wall
cells outside the slits are Dirichlet points: their rows and columns are zero.

The total Hilbert space is the grid block (dimension ``n_grid``) followed by
one bound state per pixel.  Pixel ``s`` absorbs through
``T_s = |n_grid + s><kappa_s|`` with a kernel ``kappa_s`` localized around
the pixel position.  Units: hbar = mass = 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.signal import find_peaks

from . import qstate
from .exceptions import (ConfigurationError, GeometryError, IntegrationError,
                         NumericalConsistencyError, StructuralError)
from .lindblad import LindbladGenerator, n_steps
from .unravel import _rk4

log = logging.getLogger(__name__)

KERNEL_CUTOFF = 1e-12
KERNELS = ("exponential", "gaussian")


# --------------------------------------------------------------------------
# geometry and pixels
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CavityGeometry:
    """Rectangular cavity ``shape = (nx, ny[, nz])`` with grid spacing ``spacing``.

    ``wall_column`` is the x index of the barrier (``None`` for no barrier);
    ``slits`` are half-open row intervals ``(start, stop)`` along y that are
    open in the barrier.  An empty interval (``start == stop``) is a closed
    slit, so ``((a, a), (b, b))`` is a fully closed wall.
    """

    shape: tuple = (16, 8)
    spacing: float = 1.0
    wall_column: int | None = 5
    slits: tuple = ((1, 3), (5, 7))

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "slits", tuple((int(a), int(b)) for a, b in self.slits))
        if len(shape) not in (2, 3):
            raise GeometryError(f"cavity must be 2D or 3D, got shape {shape}")
        if min(shape) < 1:
            raise GeometryError(f"grid shape must be positive, got {shape}")
        if not self.spacing > 0:
            raise GeometryError(f"grid spacing must be positive, got {self.spacing}")
        if self.wall_column is None:
            if self.slits:
                raise GeometryError("slits given but no wall column")
            return
        if not 0 < self.wall_column < shape[0] - 1:
            raise GeometryError(
                f"wall column {self.wall_column} must lie strictly between the faces (0, {shape[0] - 1})")
        if len(self.slits) > 2:
            raise GeometryError(f"at most two slits, got {len(self.slits)}")
        ny = shape[1]
        for a, b in self.slits:
            if not 0 <= a <= b <= ny:
                raise GeometryError(f"slit ({a}, {b}) outside the wall rows [0, {ny}]")
        open_ = sorted((a, b) for a, b in self.slits if b > a)
        for (a0, b0), (a1, b1) in zip(open_, open_[1:]):
            if a1 < b0:
                raise GeometryError(f"slits ({a0}, {b0}) and ({a1}, {b1}) overlap")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def n_grid(self) -> int:
        return int(np.prod(self.shape))

    @property
    def extent(self) -> tuple:
        """Physical box lengths between the ghost faces."""
        return tuple((n + 1) * self.spacing for n in self.shape)

    def index(self, *ijk) -> int:
        return int(np.ravel_multi_index(ijk, self.shape))

    def coordinates(self) -> np.ndarray:
        """``(n_grid, ndim)`` physical positions of the grid points."""
        axes = [(np.arange(n) + 1.0) * self.spacing for n in self.shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def dirichlet_mask(self) -> np.ndarray:
        """Boolean mask of wall cells outside the slits."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.wall_column is not None:
            wall = np.ones(self.shape[1], dtype=bool)
            for a, b in self.slits:
                wall[a:b] = False
            mask[self.wall_column][wall] = True
        return mask.ravel()

    def screen_index(self, position) -> int:
        """Grid index of a screen point; ``position`` is the row (2D) or ``(row, layer)``."""
        pos = (position,) if np.isscalar(position) else tuple(position)
        if len(pos) != self.ndim - 1:
            raise ConfigurationError(f"screen position {position} needs {self.ndim - 1} coordinates")
        for p, n in zip(pos, self.shape[1:]):
            if not 0 <= p < n:
                raise ConfigurationError(f"screen position {position} outside the screen")
        return self.index(self.shape[0] - 1, *pos)

    def in_gun_chamber(self, point) -> bool:
        x = float(point[0])
        right = (self.wall_column + 1) * self.spacing if self.wall_column is not None else self.extent[0]
        inside = 0.0 < x < right
        return inside and all(0.0 < float(c) < e for c, e in zip(point[1:], self.extent[1:]))

    def with_slits(self, slits) -> "CavityGeometry":
        return replace(self, slits=tuple(slits))


@dataclass(frozen=True)
class PixelArray:
    """Pixels on the screen face.

    ``positions`` are screen rows (2D) or ``(row, layer)`` pairs (3D).  The
    kernel is ``K exp(-d/R)`` (exponential) or ``K exp(-d^2 / (2 R^2))``
    (gaussian) in the physical distance ``d`` from the pixel.
    """

    positions: tuple
    kernel_range: float
    amplitude: float = 1.0
    kernel: str = "exponential"

    def __post_init__(self):
        pos = tuple(int(p) if np.isscalar(p) else tuple(int(q) for q in p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if not pos:
            raise ConfigurationError("at least one pixel is required")
        if len(set(pos)) != len(pos):
            raise ConfigurationError("pixel positions must be distinct")
        if not self.kernel_range > 0:
            raise ConfigurationError(f"kernel range must be positive, got {self.kernel_range}")
        if not self.amplitude > 0:
            raise ConfigurationError(f"kernel amplitude must be positive, got {self.amplitude}")
        if self.kernel not in KERNELS:
            raise ConfigurationError(f"unknown kernel {self.kernel!r}; choose from {KERNELS}")

    @property
    def n(self) -> int:
        return len(self.positions)

    @classmethod
    def evenly_spaced(cls, geom: CavityGeometry, n: int, kernel_range: float,
                      amplitude: float = 1.0, kernel: str = "exponential") -> "PixelArray":
        """``n`` pixels spread evenly over the screen rows (2D only)."""
        if geom.ndim != 2:
            raise ConfigurationError("evenly_spaced pixels are defined for 2D cavities")
        ny = geom.shape[1]
        if not 1 <= n <= ny:
            raise ConfigurationError(f"cannot place {n} pixels on {ny} screen rows")
        rows = np.floor((np.arange(n) + 0.5) * ny / n).astype(int)
        return cls(tuple(int(r) for r in rows), kernel_range, amplitude, kernel)

    def profile(self, d):
        if self.kernel == "exponential":
            return self.amplitude * np.exp(-d / self.kernel_range)
        return self.amplitude * np.exp(-0.5 * (d / self.kernel_range) ** 2)


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

def chain_hamiltonian(n: int, spacing: float = 1.0, right: str = "dirichlet") -> sp.csr_matrix:
    """``-(1/2) d^2/dx^2`` on ``n`` points with a Dirichlet left end.

    ``right`` is ``"dirichlet"`` (ghost zero) or ``"neumann"`` (cell-centred
    mirror, which drops one neighbour from the last diagonal entry).
    """
    if n < 1:
        raise ConfigurationError("chain needs at least one point")
    c = 1.0 / (2.0 * spacing * spacing)
    diag = np.full(n, 2.0 * c)
    if right == "neumann":
        diag[-1] = c
    elif right != "dirichlet":
        raise ConfigurationError(f"unknown boundary {right!r}")
    off = np.full(n - 1, -c)
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def build_hamiltonian(geom: CavityGeometry) -> sp.csr_matrix:
    """Sparse real symmetric ``-(1/2) Laplacian`` on the cavity grid.

    Standard (2 ndim + 1)-point stencil.  Rows and columns of wall cells
    outside the slits are exactly zero.
    """
    h = geom.spacing
    out = None
    for axis, n in enumerate(geom.shape):
        one = chain_hamiltonian(n, h, right="neumann" if axis == 0 else "dirichlet")
        left = sp.identity(int(np.prod(geom.shape[:axis])), format="csr")
        right = sp.identity(int(np.prod(geom.shape[axis + 1:])), format="csr")
        term = sp.kron(sp.kron(left, one), right, format="csr")
        out = term if out is None else out + term
    keep = sp.diags((~geom.dirichlet_mask()).astype(float))
    out = (keep @ out @ keep).tocsr()
    out.eliminate_zeros()
    return out


def pixel_kernels(geom: CavityGeometry, pixels: PixelArray) -> np.ndarray:
    """``(N, n_grid)`` array of sampled kernels ``kappa_s``.

    Values below ``1e-12 K`` are set to zero, and so is everything on the
    wall column and behind it: the pixels only see the screen chamber, so a
    closed wall shields the gun chamber completely.
    """
    h = geom.spacing
    if pixels.kernel_range < 0.1 * h:
        raise ConfigurationError(
            f"kernel range {pixels.kernel_range} is below h/10 = {0.1 * h}; "
            "the kernel would be truncated to a single grid point")
    xyz = geom.coordinates()
    dead = geom.dirichlet_mask()
    if geom.wall_column is not None:
        ix = np.unravel_index(np.arange(geom.n_grid), geom.shape)[0]
        dead = dead | (ix <= geom.wall_column)
    out = np.zeros((pixels.n, geom.n_grid))
    for s, pos in enumerate(pixels.positions):
        centre = xyz[geom.screen_index(pos)]
        d = np.sqrt(np.sum((xyz - centre) ** 2, axis=1))
        k = pixels.profile(d)
        k[k < KERNEL_CUTOFF * pixels.amplitude] = 0.0
        k[dead] = 0.0
        if not np.any(k):
            raise ConfigurationError(f"kernel of pixel {s} vanishes on the grid")
        out[s] = k
    return out


def build_jump_ops(geom: CavityGeometry, pixels: PixelArray):
    """Sparse ``T_s = |n_grid + s><kappa_s|`` on the full space (grid + bound states)."""
    kern = pixel_kernels(geom, pixels)
    n_grid = geom.n_grid
    dim = n_grid + pixels.n
    ops = []
    for s in range(pixels.n):
        cols = np.nonzero(kern[s])[0]
        rows = np.full(cols.size, n_grid + s)
        ops.append(sp.csr_matrix((kern[s, cols].astype(complex), (rows, cols)), shape=(dim, dim)))
    return ops


def decay_constant(geom: CavityGeometry, pixels: PixelArray, sigma: int, kernel=None) -> float:
    """Smallest ``K'`` with ``||T_s P_{s,r}|| <= K' exp(-r/R)`` for all ``r >= 0`` on this grid.

    ``P_{s,r}`` removes the closed ball of radius ``r`` around the pixel.
    ``exp(2r/R) sum_{d > r} kappa(d)^2`` is largest just below a grid
    distance, so the supremum is a maximum over the distinct distances.
    """
    if kernel is None:
        kernel = pixel_kernels(geom, pixels)[sigma]
    d = _pixel_distances(geom, pixels, sigma)
    order = np.argsort(d)[::-1]
    ds, k2 = d[order], kernel[order] ** 2
    tail = np.cumsum(k2)                       # sum over d >= ds[i] (descending order)
    # only the last entry of each run of equal distances counts the full shell
    last = np.r_[ds[1:] != ds[:-1], True]
    vals = tail[last] * np.exp(2.0 * ds[last] / pixels.kernel_range)
    return float(math.sqrt(vals.max()))


def _pixel_distances(geom, pixels, sigma):
    xyz = geom.coordinates()
    centre = xyz[geom.screen_index(pixels.positions[sigma])]
    return np.sqrt(np.sum((xyz - centre) ** 2, axis=1))


@dataclass(frozen=True)
class DecayBoundRow:
    pixel: int
    radius: float
    norm: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.norm <= self.bound * (1.0 + 1e-9)


def verify_decay_bound(geom: CavityGeometry, pixels: PixelArray, radii=None,
                       raise_on_failure: bool = True):
    """Check ``||T_s P_{s,r}|| <= K' exp(-r/R)`` on a ladder of radii.

    The default ladder runs from 0 to one spacing beyond the cavity diameter
    in steps of ``h/2``.  ``||T_s P|| = ||P kappa_s||`` because ``T_s`` has rank one.
    Returns a list of :class:`DecayBoundRow`.
    """
    kern = pixel_kernels(geom, pixels)
    if radii is None:
        diam = math.sqrt(sum(e * e for e in geom.extent))
        radii = np.arange(0.0, diam + geom.spacing, 0.5 * geom.spacing)
    rows = []
    for s in range(pixels.n):
        d = _pixel_distances(geom, pixels, s)
        kp = decay_constant(geom, pixels, s, kern[s])
        for r in radii:
            norm = float(np.linalg.norm(kern[s][d > r]))
            rows.append(DecayBoundRow(s, float(r), norm, kp * math.exp(-r / pixels.kernel_range)))
    bad = [row for row in rows if not row.ok]
    if bad and raise_on_failure:
        row = bad[0]
        raise NumericalConsistencyError(
            f"decay bound violated for pixel {row.pixel} at r={row.radius}: "
            f"{row.norm:.6e} > {row.bound:.6e}")
    return rows


def discrete_momentum(geom: CavityGeometry, axis: int = 0) -> sp.csr_matrix:
    """Central-difference momentum ``-i d/dx_axis`` on the grid (zero ghosts)."""
    n = geom.shape[axis]
    d = sp.diags([np.full(n - 1, -1.0), np.full(n - 1, 1.0)], [-1, 1]) / (2.0 * geom.spacing)
    left = sp.identity(int(np.prod(geom.shape[:axis])))
    right = sp.identity(int(np.prod(geom.shape[axis + 1:])))
    return (-1j * sp.kron(sp.kron(left, d), right)).tocsr()


def initial_wavepacket(geom: CavityGeometry, center, width: float, momentum=None,
                       n_bound: int = 0) -> np.ndarray:
    """Normalized Gaussian ``exp(-|x-c|^2 / (4 w^2) + i k.x)`` in the gun chamber.

    The Gaussian is cut off at the wall: the wall column and the screen
    chamber carry no amplitude.  ``n_bound`` zero amplitudes are appended for the
    pixel bound states.
    """
    center = np.asarray(center, dtype=float)
    if center.shape != (geom.ndim,):
        raise ConfigurationError(f"wavepacket centre needs {geom.ndim} coordinates")
    if not geom.in_gun_chamber(center):
        raise ConfigurationError(f"wavepacket centre {tuple(center)} is not inside the gun chamber")
    if not width > 0:
        raise ConfigurationError("wavepacket width must be positive")
    k = np.zeros(geom.ndim) if momentum is None else np.asarray(momentum, dtype=float)
    xyz = geom.coordinates()
    r2 = np.sum((xyz - center) ** 2, axis=1)
    psi = np.exp(-r2 / (4.0 * width * width)) * np.exp(1j * (xyz @ k))
    psi[geom.dirichlet_mask()] = 0.0
    if geom.wall_column is not None:
        ix = np.unravel_index(np.arange(geom.n_grid), geom.shape)[0]
        psi[ix >= geom.wall_column] = 0.0
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise ConfigurationError("wavepacket vanishes on the grid")
    return np.concatenate([psi / norm, np.zeros(n_bound, dtype=complex)])


class DoubleSlitModel:
    """Grid Hamiltonian, pixel jump operators and the assembled generator.

    The Hamiltonian on the full space is ``H_el (+) 0``: bound states do not evolve.
    """

    def __init__(self, geom: CavityGeometry, pixels: PixelArray, alpha: float):
        for pos in pixels.positions:
            geom.screen_index(pos)
        self.geometry = geom
        self.pixels = pixels
        self.alpha = float(alpha)
        self.h_el = build_hamiltonian(geom)
        self.kernels = pixel_kernels(geom, pixels)
        self.jump_ops = build_jump_ops(geom, pixels)
        self.n_grid = geom.n_grid
        self.n_pixels = pixels.n
        self.dim = self.n_grid + self.n_pixels
        ham = sp.block_diag([self.h_el, sp.csr_matrix((self.n_pixels, self.n_pixels))], format="csr")
        if ham.shape != (self.dim, self.dim):
            raise StructuralError("dimension bookkeeping mismatch")
        self.hamiltonian = ham
        self.generator = LindbladGenerator(ham, self.alpha, self.jump_ops)

    def __repr__(self):
        return (f"DoubleSlitModel(shape={self.geometry.shape}, pixels={self.n_pixels}, "
                f"alpha={self.alpha})")

    def wavepacket(self, center, width, momentum=None) -> np.ndarray:
        return initial_wavepacket(self.geometry, center, width, momentum, self.n_pixels)

    def bound_state(self, sigma: int) -> np.ndarray:
        return qstate.basis_vector(self.dim, self.n_grid + sigma)

    def grid_projector(self) -> sp.csr_matrix:
        """``P``: projector onto the grid block, as a sparse diagonal."""
        return sp.diags(np.r_[np.ones(self.n_grid), np.zeros(self.n_pixels)], format="csr")

    def bound_projector(self) -> sp.csr_matrix:
        """``P'``: projector onto the bound block."""
        return sp.diags(np.r_[np.zeros(self.n_grid), np.ones(self.n_pixels)], format="csr")

    def pixel_populations(self, rho) -> np.ndarray:
        return pixel_populations(rho, self.n_pixels)

    def pixel_rows(self) -> list:
        return [p if np.isscalar(p) else p[0] for p in self.pixels.positions]


def assemble_generator(geom: CavityGeometry, pixels: PixelArray, alpha: float) -> LindbladGenerator:
    return DoubleSlitModel(geom, pixels, alpha).generator


def pixel_populations(rho, n_pixels: int) -> np.ndarray:
    """``Tr(Q_s rho)`` for the bound states, which occupy the last ``n_pixels`` indices."""
    rho = qstate.to_dense(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] <= n_pixels:
        raise StructuralError(f"state of shape {rho.shape} cannot hold {n_pixels} bound states")
    pops = np.real(np.diagonal(rho)[-n_pixels:]).copy()
    if pops.min() < -1e-10 or pops.sum() > 1.0 + 1e-9:
        raise NumericalConsistencyError(f"invalid pixel populations (min {pops.min():.3e}, "
                                        f"sum {pops.sum():.12g})")
    return pops


# --------------------------------------------------------------------------
# escape probability
# --------------------------------------------------------------------------

@dataclass
class EscapeCurve:
    times: np.ndarray
    survival: np.ndarray
    p_esc: float
    stability: float | None = None
    final_state: np.ndarray | None = field(default=None, repr=False)


def _escape_rhs(gen):
    def f(y):
        psi = y[:-1]
        apsi = gen.effective_apply(psi)
        n2 = np.vdot(psi, psi).real
        mu = np.vdot(psi, apsi).real / n2
        rate = -gen.alpha * float(np.sum(gen.jump_amplitudes(psi))) / n2
        return np.concatenate([apsi - mu * psi, [rate]])
    return f


def escape_probability(gen: LindbladGenerator, psi0, ode_dt: float, t_max: float,
                       snapshot_every: int = 1, check_stability: bool = False) -> EscapeCurve:
    """No-jump survival ``p(t)`` up to ``t_max``; ``p(t_max)`` estimates the escape probability.

    The normalized no-jump state and ``ln p`` are integrated together with RK4,
    ``d ln p / dt = -alpha sum_s ||T_s psi||^2``.  With ``check_stability`` the
    integration continues to ``2 t_max`` and ``p(t_max) - p(2 t_max)`` is
    reported in ``stability``.
    """
    psi = qstate.as_pure_state(psi0).astype(complex)
    if psi.shape != (gen.dim,):
        raise StructuralError("initial state dimension does not match the generator")
    if not t_max > 0:
        raise ConfigurationError("t_max must be positive")
    n = n_steps(ode_dt, t_max)
    h = t_max / n
    total = 2 * n if check_stability else n
    f = _escape_rhs(gen)
    y = np.concatenate([psi, [0.0]])
    times, logp = [0.0], [0.0]
    final = None
    for k in range(1, total + 1):
        y = _rk4(f, y, h)
        y[:-1] /= np.linalg.norm(y[:-1])
        lp = y[-1].real
        if lp > logp[-1] + 1e-10 and k <= n:
            raise IntegrationError(f"survival increased at step {k} (t={k * h:g})")
        y[-1] = min(lp, logp[-1]) if k <= n else lp
        if k == n:
            final = y[:-1].copy()
        if k <= n and (k % snapshot_every == 0 or k == n):
            times.append(k * h)
            logp.append(y[-1].real)
    p = np.exp(np.array(logp))
    stab = float(p[-1] - math.exp(y[-1].real)) if check_stability else None
    return EscapeCurve(np.array(times), p, float(p[-1]), stab, final)


def unnormalized_survival(gen: LindbladGenerator, psi0, ode_dt: float, t_max: float) -> float:
    """``||phi(t_max)||^2`` for the unnormalized no-jump flow ``phi' = (-iH - alpha/2 K) phi``."""
    phi = qstate.as_pure_state(psi0).astype(complex)
    n = n_steps(ode_dt, t_max)
    h = t_max / n
    for _ in range(n):
        phi = _rk4(gen.effective_apply, phi, h)
    return float(np.vdot(phi, phi).real)


# --------------------------------------------------------------------------
# fringe analysis
# --------------------------------------------------------------------------

def count_maxima(profile, prominence: float = 1e-6, interior: bool = True) -> int:
    """Number of local maxima whose prominence exceeds ``prominence``.

    ``interior=False`` also counts maxima at the ends of the profile, so a
    unimodal profile gives exactly 1.  Plateaus count once.
    """
    x = np.asarray(profile, dtype=float)
    if not interior:
        pad = x.min() - 2.0 * max(prominence, 1e-300) - 1.0
        x = np.r_[pad, x, pad]
    peaks, _ = find_peaks(x, prominence=prominence)
    return int(peaks.size)


def central_slice(n: int) -> slice:
    """Indices of the central third of ``n`` bins (at least three bins)."""
    lo = int(math.floor(n / 3))
    hi = int(math.ceil(2 * n / 3))
    if hi - lo < 3:
        mid = n // 2
        lo, hi = max(0, mid - 2), min(n, mid + 2)
    return slice(lo, hi)


def visibility(profile) -> float:
    """``(max - min) / (max + min)``."""
    x = np.asarray(profile, dtype=float)
    top, bottom = x.max(), x.min()
    if top + bottom <= 0:
        return 0.0
    return float((top - bottom) / (top + bottom))


def central_visibility(profile) -> float:
    x = np.asarray(profile, dtype=float)
    return visibility(x[central_slice(x.size)])


# --------------------------------------------------------------------------
# sparse triplet dump
# --------------------------------------------------------------------------

TRIPLET_HEADER = "row,col,re,im"


def dump_triplets(op, stream, name: str = "operator") -> None:
    """Write ``op`` as ``row,col,re,im`` lines after a ``#`` header."""
    m = sp.coo_matrix(op)
    stream.write(f"# name={name}\n# shape={m.shape[0]},{m.shape[1]}\n# nnz={m.nnz}\n")
    stream.write(TRIPLET_HEADER + "\n")
    order = np.lexsort((m.col, m.row))
    data = m.data.astype(complex)
    for i in order:
        stream.write(f"{m.row[i]},{m.col[i]},{data[i].real:.17g},{data[i].imag:.17g}\n")


def load_triplets(stream) -> sp.csr_matrix:
    shape = None
    rows, cols, vals = [], [], []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# shape="):
                shape = tuple(int(v) for v in line.split("=", 1)[1].split(","))
            continue
        if line == TRIPLET_HEADER:
            continue
        r, c, re_, im = line.split(",")
        rows.append(int(r))
        cols.append(int(c))
        vals.append(complex(float(re_), float(im)))
    if shape is None:
        raise ValueError("triplet stream lacks a shape header")
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=shape)
