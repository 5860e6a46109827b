from __future__ import annotations

import logging

import numpy as np
from numpy.polynomial import chebyshev
from scipy.fft import dct

logger = logging.getLogger(__name__)


def is_power_of_two(n: int) -> bool:
    """
    Returns True if n is a power of two and at least 8.
    """
    return n >= 8 and (n & (n - 1)) == 0


class PeriodicGrid:
    """
    A doubly periodic horizontal grid [0, Lx) x [0, Ly) with FFT based operators.

    Arrays are indexed [..., i, j, *trailing] where i runs along x and j along y.
    Operators take a `trailing` argument giving the number of axes after (i, j),
    so the same grid differentiates 2D fields, layer coefficients and 3D columns.
    """

    nx: int
    ny: int
    lx: float
    ly: float
    dx: float
    dy: float
    x: np.ndarray
    y: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    kx: np.ndarray      # derivative wavenumbers, Nyquist zeroed
    ky: np.ndarray
    k2: np.ndarray
    dealias_mask: np.ndarray

    def __init__(self, nx: int, ny: int, lx: float = 2 * np.pi, ly: float = 2 * np.pi) -> None:
        """
        Creates the grid. Nx and Ny must be powers of two >= 8.
        """
        try:
            assert is_power_of_two(nx) and is_power_of_two(ny)
            assert lx > 0 and ly > 0
        except AssertionError:
            raise ValueError(f"grid needs Nx, Ny powers of two >= 8 and positive box lengths, got {nx}x{ny}, {lx}x{ly}")

        self.nx, self.ny = nx, ny
        self.lx, self.ly = float(lx), float(ly)
        self.dx, self.dy = self.lx / nx, self.ly / ny
        self.x = np.arange(nx) * self.dx
        self.y = np.arange(ny) * self.dy
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")

        kx = 2 * np.pi * np.fft.fftfreq(nx, d=self.dx)
        ky = 2 * np.pi * np.fft.fftfreq(ny, d=self.dy)
        kx[nx // 2] = 0.0
        ky[ny // 2] = 0.0
        self.kx, self.ky = np.meshgrid(kx, ky, indexing="ij")
        self.k2 = self.kx ** 2 + self.ky ** 2

        nxi, nyi = np.meshgrid(np.fft.fftfreq(nx) * nx, np.fft.fftfreq(ny) * ny, indexing="ij")
        self.dealias_mask = (np.abs(nxi) < nx / 3) & (np.abs(nyi) < ny / 3)
        logger.debug("periodic grid %dx%d on %.4g x %.4g", nx, ny, self.lx, self.ly)

    def __str__(self) -> str:
        return f"PeriodicGrid ({self.nx}x{self.ny}, {self.lx:g} x {self.ly:g})"

    def same_as(self, other: PeriodicGrid) -> bool:
        return (self.nx, self.ny, self.lx, self.ly) == (other.nx, other.ny, other.lx, other.ly)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    # transforms

    @staticmethod
    def _axes(trailing: int) -> tuple[int, int]:
        return (-2 - trailing, -1 - trailing)

    @staticmethod
    def _expand(symbol: np.ndarray, trailing: int) -> np.ndarray:
        return symbol.reshape(symbol.shape + (1,) * trailing)

    def fft(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        return np.fft.fft2(f, axes=self._axes(trailing))

    def ifft(self, f_hat: np.ndarray, trailing: int = 0) -> np.ndarray:
        return np.fft.ifft2(f_hat, axes=self._axes(trailing)).real

    def apply_symbol(self, f: np.ndarray, symbol: np.ndarray, trailing: int = 0) -> np.ndarray:
        """
        Multiplies the Fourier coefficients of f by symbol and transforms back.
        Complex f is handled by transforming real and imaginary parts.
        """
        s = self._expand(symbol, trailing)
        if np.iscomplexobj(f):
            return self.apply_symbol(f.real, symbol, trailing) + 1j * self.apply_symbol(f.imag, symbol, trailing)
        return self.ifft(s * self.fft(f, trailing), trailing)

    # differential operators

    def ddx(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        return self.apply_symbol(f, 1j * self.kx, trailing)

    def ddy(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        return self.apply_symbol(f, 1j * self.ky, trailing)

    def gradient(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        """
        Returns the horizontal gradient stacked on a new leading axis.
        """
        return np.stack([self.ddx(f, trailing), self.ddy(f, trailing)])

    def divergence(self, fx: np.ndarray, fy: np.ndarray, trailing: int = 0) -> np.ndarray:
        return self.apply_symbol(fx, 1j * self.kx, trailing) + self.apply_symbol(fy, 1j * self.ky, trailing)

    def curl(self, fx: np.ndarray, fy: np.ndarray, trailing: int = 0) -> np.ndarray:
        """
        Returns the scalar curl d(fy)/dx - d(fx)/dy.
        """
        return self.apply_symbol(fy, 1j * self.kx, trailing) - self.apply_symbol(fx, 1j * self.ky, trailing)

    def laplacian(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        return self.apply_symbol(f, -self.k2, trailing)

    def inverse_laplacian(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        """
        Solves lap(phi) = f for the mean free phi. Modes with zero symbol are set to zero.
        """
        symbol = np.zeros_like(self.k2)
        nonzero = self.k2 > 0
        symbol[nonzero] = -1.0 / self.k2[nonzero]
        return self.apply_symbol(f, symbol, trailing)

    def dealias(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        """
        Removes the modes outside the 2/3 band.
        """
        return self.apply_symbol(f, self.dealias_mask.astype(float), trailing)

    def leray_project(self, fx: np.ndarray, fy: np.ndarray, trailing: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """
        Projects (fx, fy) onto divergence free fields with P = I - k k^T / |k|^2.
        The zero mode is left untouched.
        """
        kx = self._expand(self.kx, trailing)
        ky = self._expand(self.ky, trailing)
        k2 = self._expand(self.k2, trailing)
        inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)

        fx_hat = self.fft(fx, trailing)
        fy_hat = self.fft(fy, trailing)
        k_dot_f = (kx * fx_hat + ky * fy_hat) * inv_k2
        return self.ifft(fx_hat - kx * k_dot_f, trailing), self.ifft(fy_hat - ky * k_dot_f, trailing)

    def advect(self, ux: np.ndarray, uy: np.ndarray, f: np.ndarray) -> np.ndarray:
        """
        Returns the dealiased product (u . grad) f for a 2D field f.
        Inputs are truncated to the 2/3 band before the product is formed.
        """
        ux_d, uy_d = self.dealias(ux), self.dealias(uy)
        f_d = self.dealias(f)
        product = ux_d * self.ddx(f_d) + uy_d * self.ddy(f_d)
        return self.dealias(product)

    # reductions

    def mean(self, f: np.ndarray, trailing: int = 0) -> np.ndarray:
        return f.mean(axis=self._axes(trailing))

    def integrate(self, f: np.ndarray) -> float:
        """
        Returns the integral of a 2D field over the box.
        """
        return float(np.sum(f) * self.cell_area)

    def l2_norm(self, *components: np.ndarray) -> float:
        """
        Returns the L2 norm over the box of a scalar or vector field given by its components.
        """
        total = sum(np.sum(c ** 2) for c in components)
        return float(np.sqrt(total * self.cell_area))


def relative_divergence(grid: PeriodicGrid, fx: np.ndarray, fy: np.ndarray) -> float:
    """
    Returns ||div f|| / ||grad f||, zero for a constant field.
    """
    div = grid.divergence(fx, fy)
    scale = grid.l2_norm(*grid.gradient(fx), *grid.gradient(fy))
    if scale == 0.0:
        return 0.0
    return grid.l2_norm(div) / scale


class ChebyshevInterval:
    """
    Chebyshev-Gauss-Lobatto nodes on [a, b], increasing, with spectral integration and
    differentiation matrices acting on samples along the last axis.
    """

    a: float
    b: float
    n: int
    nodes: np.ndarray
    head_matrix: np.ndarray         # int_a^z at every node
    tail_matrix: np.ndarray         # int_z^b at every node
    derivative_matrix: np.ndarray
    weights: np.ndarray             # Clenshaw-Curtis weights of int_a^b

    def __init__(self, a: float, b: float, n: int) -> None:
        try:
            assert n >= 2 and b > a
        except AssertionError:
            raise ValueError(f"Chebyshev interval needs n >= 2 and b > a, got n={n} on [{a}, {b}]")
        self.a, self.b, self.n = float(a), float(b), n

        s = np.cos(np.pi * np.arange(n + 1) / n)
        half = (self.b - self.a) / 2.0
        self.nodes = self.a + half * (1.0 - s)

        # Chebyshev coefficients of a unit value at each node
        coeffs = dct(np.eye(n + 1), type=1, axis=0) / n
        coeffs[0] /= 2.0
        coeffs[n] /= 2.0

        antiderivative = chebyshev.chebvander(s, n + 1) @ chebyshev.chebint(coeffs, axis=0)
        self.head_matrix = half * (antiderivative[0][np.newaxis, :] - antiderivative)
        self.tail_matrix = half * (antiderivative - antiderivative[n][np.newaxis, :])
        self.weights = self.head_matrix[n].copy()
        self.derivative_matrix = -(chebyshev.chebvander(s, n - 1) @ chebyshev.chebder(coeffs, axis=0)) / half

    def __str__(self) -> str:
        return f"ChebyshevInterval ({self.n + 1} nodes on [{self.a:g}, {self.b:g}])"

    def head(self, values: np.ndarray) -> np.ndarray:
        return values @ self.head_matrix.T

    def tail(self, values: np.ndarray) -> np.ndarray:
        return values @ self.tail_matrix.T

    def differentiate(self, values: np.ndarray) -> np.ndarray:
        return values @ self.derivative_matrix.T

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return values @ self.weights
