"""Forward measurement operators ``y = A(x) + noise``.

Every operator exposes ``apply``, ``jacobian_tvp`` and, for the linear
kinds, ``adjoint`` and a dense ``matrix()`` view. Images are flattened in
row-major order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import UnsupportedOperation
from .linalg import conjugate_gradient

LINEAR_KINDS = ("identity", "mask", "box_mask", "downsample", "gaussian_blur", "radon", "matrix")


class ForwardOperator:
    """Base class. Subclasses set ``kind``, ``n`` (pixel dim) and ``m`` (measurement dim)."""

    kind: str = ""
    n: int
    m: int
    pinv_damping: float = 0.0

    @property
    def linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    def _check_in(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"{self.kind}: expected input of shape ({self.n},), got {x.shape}")
        return x

    def _check_out(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.m,):
            raise ValueError(f"{self.kind}: expected measurement of shape ({self.m},), got {u.shape}")
        return u

    def apply(self, x) -> np.ndarray:
        return self._apply(self._check_in(x))

    def adjoint(self, u) -> np.ndarray:
        if not self.linear:
            raise UnsupportedOperation(f"{self.kind} is nonlinear; use jacobian_tvp")
        return self._adjoint(self._check_out(u))

    def jacobian_tvp(self, x, u) -> np.ndarray:
        """Jacobian-transpose-vector product ``J_A(x)^T u``."""
        x, u = self._check_in(x), self._check_out(u)
        return self._adjoint(u)

    def matrix(self) -> np.ndarray:
        """Dense ``(m, n)`` matrix of a linear operator."""
        if not self.linear:
            raise UnsupportedOperation(f"{self.kind} has no matrix form")
        return np.stack([self._apply(e) for e in np.eye(self.n)], axis=1)

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, m={self.m}, n={self.n})"


class Identity(ForwardOperator):
    kind = "identity"

    def __init__(self, n: int):
        self.n = self.m = n

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, u):
        return u.copy()


class Mask(ForwardOperator):
    """Keeps the entries listed in ``keep``."""

    kind = "mask"

    def __init__(self, n: int, keep, kind: str = "mask"):
        keep = np.unique(np.asarray(keep, dtype=np.int64))
        if keep.size == 0 or keep[0] < 0 or keep[-1] >= n:
            raise ValueError("mask indices must be a non-empty subset of range(n)")
        self.n, self.m, self.keep = n, keep.size, keep
        self.kind = kind

    def _apply(self, x):
        return x[self.keep]

    def _adjoint(self, u):
        out = np.zeros(self.n)
        out[self.keep] = u
        return out


def random_mask(n: int, keep_fraction: float = 0.7, seed: int = 0) -> Mask:
    rng = np.random.default_rng(seed)
    k = max(1, int(round(keep_fraction * n)))
    return Mask(n, rng.choice(n, size=k, replace=False))


def box_mask(shape: tuple[int, int], top: int, left: int, height: int, width: int) -> Mask:
    """Drops a ``height x width`` box of a 2-D image."""
    keep = np.ones(shape, dtype=bool)
    keep[top:top + height, left:left + width] = False
    return Mask(int(np.prod(shape)), np.flatnonzero(keep), kind="box_mask")


class Downsample(ForwardOperator):
    """Block averaging by ``factor`` along every axis of ``shape``."""

    kind = "downsample"

    def __init__(self, shape, factor: int):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        if factor < 1 or any(s % factor for s in shape):
            raise ValueError("every dimension must be divisible by the factor")
        self.shape, self.factor = shape, factor
        self.n = int(np.prod(shape))
        self.m = self.n // factor ** len(shape)
        self._split = tuple(v for s in shape for v in (s // factor, factor))
        self._axes = tuple(range(1, 2 * len(shape), 2))

    def _apply(self, x):
        return x.reshape(self._split).mean(axis=self._axes).ravel()

    def _adjoint(self, u):
        coarse = u.reshape([s // self.factor for s in self.shape])
        for ax in range(len(self.shape)):
            coarse = np.repeat(coarse, self.factor, axis=ax)
        return coarse.ravel() / self.factor ** len(self.shape)


def gaussian_kernel(shape, size: int, sigma: float) -> np.ndarray:
    """Normalized Gaussian kernel centred at the origin with circular wrap."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    r = size // 2
    offs = np.arange(-r, r + 1)
    g1 = np.exp(-0.5 * (offs / sigma) ** 2)
    k = g1
    for _ in shape[1:]:
        k = np.multiply.outer(k, g1)
    k = k / k.sum()
    out = np.zeros(shape)
    idx = np.ix_(*[offs % s for s in shape])
    np.add.at(out, idx, k)
    return out


class GaussianBlur(ForwardOperator):
    """Circular convolution with a Gaussian kernel, via FFT."""

    kind = "gaussian_blur"

    def __init__(self, shape, size: int = 5, sigma: float = 1.0):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        self.shape, self.size, self.sigma = shape, size, sigma
        self.n = self.m = int(np.prod(shape))
        self._fk = np.fft.fftn(gaussian_kernel(shape, size, sigma))

    def _apply(self, x):
        return np.real(np.fft.ifftn(np.fft.fftn(x.reshape(self.shape)) * self._fk)).ravel()

    def _adjoint(self, u):
        return np.real(np.fft.ifftn(np.fft.fftn(u.reshape(self.shape)) * np.conj(self._fk))).ravel()


class NonlinearBlur(ForwardOperator):
    """Saturating blur ``tanh(gain * K x)`` with ``K`` a circular Gaussian blur."""

    kind = "nonlinear_blur"

    def __init__(self, shape, size: int = 5, sigma: float = 1.0, gain: float = 3.0):
        self.blur = GaussianBlur(shape, size, sigma)
        self.gain = gain
        self.n = self.m = self.blur.n

    def _apply(self, x):
        return np.tanh(self.gain * self.blur._apply(x))

    def jacobian_tvp(self, x, u) -> np.ndarray:
        x, u = self._check_in(x), self._check_out(u)
        s = 1.0 - np.tanh(self.gain * self.blur._apply(x)) ** 2
        return self.blur._adjoint(self.gain * s * u)


class MatrixOperator(ForwardOperator):
    """Generic linear operator from an explicit (dense or sparse) matrix."""

    kind = "matrix"

    def __init__(self, A, kind: str = "matrix", damping: float = 0.0):
        self.A = A if sp.issparse(A) else np.asarray(A, dtype=np.float64)
        self.m, self.n = self.A.shape
        self.kind = kind
        self.pinv_damping = damping

    def _apply(self, x):
        return np.asarray(self.A @ x).ravel()

    def _adjoint(self, u):
        return np.asarray(self.A.T @ u).ravel()

    def matrix(self) -> np.ndarray:
        return self.A.toarray() if sp.issparse(self.A) else self.A.copy()


class Radon(MatrixOperator):
    """Parallel-beam projector on a ``grid x grid`` image, unit pixel size.

    Sinograms are stored angle-major: shape ``(n_angles, n_detectors)``.
    """

    def __init__(self, grid: int, angles: np.ndarray, n_detectors: int, spacing: float,
                 damping: float = 1e-6):
        self.grid, self.angles = grid, np.asarray(angles, dtype=np.float64)
        self.n_detectors, self.spacing = n_detectors, spacing
        self.offsets = (np.arange(n_detectors) - (n_detectors - 1) / 2.0) * spacing
        super().__init__(_siddon_matrix(grid, self.angles, self.offsets), "radon", damping)

    @property
    def n_angles(self) -> int:
        return self.angles.size


def _ray_chords(grid: int, theta: float, s: float):
    """Pixel indices and chord lengths of the line ``x cos + y sin = s``."""
    edges = np.arange(grid + 1) - grid / 2.0
    c, sn = np.cos(theta), np.sin(theta)
    px, py = s * c, s * sn         # closest point to the origin
    dx, dy = -sn, c                # direction
    lam = []
    if abs(dx) > 1e-12:
        lam.append((edges - px) / dx)
    if abs(dy) > 1e-12:
        lam.append((edges - py) / dy)
    lam = np.unique(np.concatenate(lam))
    if lam.size < 2:
        return np.empty(0, np.int64), np.empty(0)
    mid = 0.5 * (lam[1:] + lam[:-1])
    length = np.diff(lam)
    xm, ym = px + mid * dx, py + mid * dy
    j = np.floor(xm + grid / 2.0).astype(np.int64)
    i = np.floor(ym + grid / 2.0).astype(np.int64)
    ok = (i >= 0) & (i < grid) & (j >= 0) & (j < grid) & (length > 1e-12)
    return i[ok] * grid + j[ok], length[ok]


def _siddon_matrix(grid: int, angles: np.ndarray, offsets: np.ndarray) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for a, theta in enumerate(angles):
        for d, s in enumerate(offsets):
            idx, length = _ray_chords(grid, theta, s)
            rows.append(np.full(idx.size, a * offsets.size + d))
            cols.append(idx)
            vals.append(length)
    shape = (angles.size * offsets.size, grid * grid)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=shape)


def make_radon(grid: int, n_angles: int = 25, n_detectors: int | None = None,
               spacing: float = 1.0, damping: float = 1e-6) -> Radon:
    """Sparse parallel-beam projector with angles ``i * pi / n_angles``.

    ``n_detectors`` defaults to the smallest odd count covering the image
    diagonal at unit spacing.
    """
    if grid < 8:
        raise ValueError("grid must be >= 8")
    if n_detectors is None:
        n_detectors = int(np.ceil(grid * np.sqrt(2) / spacing)) | 1
    if n_detectors < grid:
        warnings.warn(f"{n_detectors} detectors undersample a {grid}-pixel grid", UserWarning,
                      stacklevel=2)
    angles = np.arange(n_angles) * np.pi / n_angles
    return Radon(grid, angles, n_detectors, spacing, damping)


def ramp_filter(n_detectors: int, spacing: float = 1.0) -> np.ndarray:
    """Frequency response of the band-limited Ram-Lak filter on a padded grid."""
    size = max(64, int(2 ** np.ceil(np.log2(2 * n_detectors))))
    n = np.concatenate((np.arange(1, size // 2 + 1, 2), np.arange(size // 2 - 1, 0, -2)))
    h = np.zeros(size)
    h[0] = 0.25
    h[1::2] = -1.0 / (np.pi * n) ** 2
    return np.real(np.fft.fft(h)) / spacing


def fbp_reconstruct(radon_op: ForwardOperator, sinogram) -> np.ndarray:
    """Filtered backprojection: ramp filter per projection, adjoint, ``pi / n_angles`` scale."""
    if not isinstance(radon_op, Radon):
        raise UnsupportedOperation("FBP needs a radon operator")
    sino = np.asarray(sinogram, dtype=np.float64).reshape(radon_op.n_angles, radon_op.n_detectors)
    filt = ramp_filter(radon_op.n_detectors, radon_op.spacing)
    padded = np.zeros((radon_op.n_angles, filt.size))
    padded[:, :radon_op.n_detectors] = sino
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * filt, axis=1))
    q = filtered[:, :radon_op.n_detectors].ravel()
    return radon_op.adjoint(q) * radon_op.spacing * np.pi / radon_op.n_angles


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    sigma_y: float
    operator_id: str

    def __post_init__(self):
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be >= 0")


def add_noise(y_clean, sigma_y: float, rng: np.random.Generator, operator_id: str = "") -> Measurement:
    if sigma_y < 0:
        raise ValueError("sigma_y must be >= 0")
    y_clean = np.asarray(y_clean, dtype=np.float64)
    y = y_clean + sigma_y * rng.standard_normal(y_clean.shape)
    return Measurement(y, float(sigma_y), operator_id)


def pseudoinverse_apply(op: ForwardOperator, r, cg_iters: int = 100, cg_tol: float = 1e-10,
                        damping: float | None = None) -> np.ndarray:
    """``A^T (A A^T + damping I)^{-1} r`` with the inner solve done by CG.

    ``damping`` defaults to the operator's own (``1e-6`` for radon, 0 otherwise).
    """
    if not op.linear:
        raise UnsupportedOperation(f"{op.kind} is nonlinear; no pseudo-inverse")
    r = op._check_out(r)
    lam = op.pinv_damping if damping is None else damping
    if op.kind == "identity":
        return r / (1.0 + lam)
    res = conjugate_gradient(lambda u: op._apply(op._adjoint(u)) + lam * u, r, cg_iters, cg_tol)
    return op._adjoint(res.x)
