"""Kernels k(x, .): H -> Y, the forward operator K and pointwise pre-adjoint K*.

All linear algebra is real. A complex channel of H or Y is stored as an
interleaved (re, im) pair, so multiplication by g in C becomes the 2x2 block
[[re g, -im g], [im g, re g]].
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .measure import DiscreteMeasure, Domain

_CHUNK = 4096


@dataclass
class KernelEvaluation:
    """Kernel matrices at one or many points.

    Batched shapes: ``A`` (n, dim_y, dim_h), ``dA`` (n, d, dim_y, dim_h),
    ``d2A`` (n, d, d, dim_y, dim_h). Single-point evaluations drop the leading n.
    """

    A: np.ndarray
    dA: np.ndarray | None = None
    d2A: np.ndarray | None = None

    def at(self, i: int) -> "KernelEvaluation":
        return KernelEvaluation(
            self.A[i],
            None if self.dA is None else self.dA[i],
            None if self.d2A is None else self.d2A[i],
        )


class Kernel(ABC):
    """A C^2 kernel over a box domain, linear in its H argument."""

    domain: Domain

    @property
    @abstractmethod
    def dim_h(self) -> int: ...

    @property
    @abstractmethod
    def dim_y(self) -> int: ...

    @property
    def d(self) -> int:
        return self.domain.dim

    @abstractmethod
    def evaluate(self, xs: np.ndarray, order: int = 0) -> KernelEvaluation:
        """Batched evaluation at ``xs`` of shape (n, d)."""

    def to_config(self) -> dict:
        raise NotImplementedError


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 or x.size != 1 else x.reshape(1, 1)
    return x


def _complex_block(g: np.ndarray) -> np.ndarray:
    """Stack complex numbers (...,) into real 2x2 blocks (..., 2, 2)."""
    re, im = g.real, g.imag
    return np.stack([np.stack([re, -im], -1), np.stack([im, re], -1)], -2)


class HelmholtzKernel(Kernel):
    """Free-space 3D Helmholtz fundamental solutions observed at depth D.

    Channel c of H (complex, wave number kappas[c]) maps to channel c at every
    observation point y_m via multiplication by
    ``g(xi) = exp(i kappa r) / r`` with ``r = sqrt(xi^2 + D^2)``, ``xi = x - y_m``.
    Y is laid out m-major: index ``4m + 2c + (0 | 1)`` for two channels.
    """

    def __init__(self, kappas, depth: float = 0.5, obs_points=None, domain: Domain | None = None):
        self.kappas = np.asarray(kappas, dtype=float).ravel()
        self.depth = float(depth)
        if obs_points is None:
            obs_points = np.linspace(-1.0, 1.0, 7)
        self.obs_points = np.asarray(obs_points, dtype=float).ravel()
        self.domain = domain if domain is not None else Domain.interval(-1.0, 1.0)
        if self.depth <= 0:
            raise ValueError("depth must be positive")
        if self.obs_points.size < 1:
            raise ValueError("need at least one observation point")
        if self.kappas.size < 1:
            raise ValueError("need at least one wave number")
        if self.domain.dim != 1:
            raise ValueError("Helmholtz kernel is defined on a 1D domain")

    @property
    def n_channels(self) -> int:
        return self.kappas.size

    @property
    def dim_h(self) -> int:
        return 2 * self.n_channels

    @property
    def dim_y(self) -> int:
        return 2 * self.n_channels * self.obs_points.size

    def green(self, xs: np.ndarray, order: int = 0):
        """g, g', g'' at xi = x - y_m; arrays of shape (n, M, C), complex."""
        xi = np.asarray(xs, dtype=float).reshape(-1, 1) - self.obs_points[None, :]
        r = np.sqrt(xi**2 + self.depth**2)[..., None]
        xi = xi[..., None]
        k = self.kappas[None, None, :]
        g = np.exp(1j * k * r) / r
        if order == 0:
            return g, None, None
        h = 1j * k - 1.0 / r
        a = h * xi / r
        g1 = g * a
        if order == 1:
            return g, g1, None
        da = xi**2 / r**4 + h * self.depth**2 / r**3
        g2 = g * (a**2 + da)
        return g, g1, g2

    def _blocks(self, g: np.ndarray) -> np.ndarray:
        n, M, C = g.shape
        blocks = _complex_block(g)  # (n, M, C, 2, 2)
        out = np.zeros((n, M, C, 2, C, 2))
        for c in range(C):
            out[:, :, c, :, c, :] = blocks[:, :, c]
        return out.reshape(n, 2 * C * M, 2 * C)

    def evaluate(self, xs, order: int = 0) -> KernelEvaluation:
        xs = _as_points(xs, 1)
        g, g1, g2 = self.green(xs[:, 0], order)
        A = self._blocks(g)
        dA = None if g1 is None else self._blocks(g1)[:, None]
        d2A = None if g2 is None else self._blocks(g2)[:, None, None]
        return KernelEvaluation(A, dA, d2A)

    def complex_structure(self) -> tuple[np.ndarray, np.ndarray]:
        """Block-diagonal 90 degree rotations J_H, J_Y (multiplication by i)."""
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        J_H = np.kron(np.eye(self.dim_h // 2), rot)
        J_Y = np.kron(np.eye(self.dim_y // 2), rot)
        return J_H, J_Y

    def to_config(self) -> dict:
        return {
            "type": "helmholtz",
            "kappas": self.kappas.tolist(),
            "depth": self.depth,
            "obs_points": self.obs_points.tolist(),
        }


def kernel_from_config(cfg: dict) -> Kernel:
    cfg = dict(cfg)
    kind = cfg.pop("type", "helmholtz")
    if kind != "helmholtz":
        raise ValueError(f"unknown kernel type {kind!r}")
    domain = cfg.pop("domain", None)
    if domain is not None:
        domain = Domain(np.asarray(domain[0], float), np.asarray(domain[1], float))
    n_obs = cfg.pop("n_obs", None)
    obs = cfg.pop("obs_points", None)
    if obs is None and n_obs is not None:
        obs = np.linspace(-1.0, 1.0, int(n_obs))
    kernel = HelmholtzKernel(
        kappas=cfg.pop("kappas", [4 * np.pi, 6 * np.pi]),
        depth=cfg.pop("depth", 0.5),
        obs_points=obs,
        domain=domain,
    )
    if cfg:
        raise ValueError(f"unknown kernel config keys: {sorted(cfg)}")
    return kernel


def kernel_config_json(kernel: Kernel) -> str:
    return json.dumps(kernel.to_config())


def kernel_eval(kernel: Kernel, x, order: int = 0) -> KernelEvaluation:
    """Single-point kernel evaluation."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    return kernel.evaluate(_as_points(x, kernel.d)[:1], order).at(0)


def assemble(kernel: Kernel, points: np.ndarray) -> np.ndarray:
    """Stacked matrix [A(x_1) ... A(x_N)] of shape (dim_y, N*dim_h)."""
    points = np.asarray(points, dtype=float).reshape(-1, kernel.d)
    if len(points) == 0:
        return np.zeros((kernel.dim_y, 0))
    A = kernel.evaluate(points, 0).A  # (N, dy, dh)
    return np.transpose(A, (1, 0, 2)).reshape(kernel.dim_y, -1)


def apply_K(kernel: Kernel, m: DiscreteMeasure) -> np.ndarray:
    """K m = sum_n A(x_n) u_n."""
    if len(m) == 0:
        return np.zeros(kernel.dim_y)
    if m.dim_h != kernel.dim_h:
        raise ValueError(f"coefficient dimension {m.dim_h} != kernel dim_h {kernel.dim_h}")
    A = kernel.evaluate(m.points, 0).A
    out = np.zeros(kernel.dim_y)
    for An, un in zip(A, m.coeffs):
        out = out + An @ un
    return out


def kstar_batch(kernel: Kernel, y: np.ndarray, xs: np.ndarray, order: int = 0):
    """(K* y)(x) and its spatial derivatives at many points.

    Returns ``p`` (n, dim_h), ``dp`` (n, d, dim_h) or None, ``d2p`` (n, d, d, dim_h) or None.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, kernel.d)
    y = np.asarray(y, dtype=float)
    ps, dps, d2ps = [], [], []
    for start in range(0, max(len(xs), 1), _CHUNK):
        chunk = xs[start:start + _CHUNK]
        if len(chunk) == 0:
            break
        ev = kernel.evaluate(chunk, order)
        ps.append(np.einsum("nyh,y->nh", ev.A, y))
        if order >= 1:
            dps.append(np.einsum("niyh,y->nih", ev.dA, y))
        if order >= 2:
            d2ps.append(np.einsum("nijyh,y->nijh", ev.d2A, y))
    if not ps:
        return np.zeros((0, kernel.dim_h)), None, None
    p = np.concatenate(ps)
    dp = np.concatenate(dps) if order >= 1 else None
    d2p = np.concatenate(d2ps) if order >= 2 else None
    return p, dp, d2p


def apply_Kstar_at(kernel: Kernel, y: np.ndarray, x, order: int = 0):
    """Pre-adjoint at a single point: p = A(x)^T y with derivatives up to ``order``."""
    p, dp, d2p = kstar_batch(kernel, y, _as_points(x, kernel.d)[:1], order)
    return p[0], None if dp is None else dp[0], None if d2p is None else d2p[0]


def fd_check(kernel: Kernel, x, y: np.ndarray, step: float = 1e-6) -> dict:
    """Max relative errors of analytic dp (vs central FD of p) and d2p (vs FD of dp)."""
    x = _as_points(x, kernel.d)[0]
    p, dp, d2p = apply_Kstar_at(kernel, y, x, 2)
    d = kernel.d
    fd1 = np.zeros_like(dp)
    fd2 = np.zeros_like(d2p)
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        pp, dpp, _ = apply_Kstar_at(kernel, y, x + e, 1)
        pm, dpm, _ = apply_Kstar_at(kernel, y, x - e, 1)
        fd1[i] = (pp - pm) / (2 * step)
        fd2[:, i] = (dpp - dpm) / (2 * step)
    scale1 = max(np.max(np.abs(dp)), np.max(np.abs(fd1)), 1e-300)
    scale2 = max(np.max(np.abs(d2p)), np.max(np.abs(fd2)), 1e-300)
    return {
        "dp_rel_err": float(np.max(np.abs(dp - fd1)) / scale1),
        "d2p_rel_err": float(np.max(np.abs(d2p - fd2)) / scale2),
    }


def max_operator_gain(kernel: Kernel, n_grid: int = 1000) -> float:
    """max over a grid of sigma_max(A(x)); bounds ||K m|| / ||m||_TV."""
    xs = kernel.domain.grid(n_grid)
    A = kernel.evaluate(xs, 0).A
    return float(np.max(np.linalg.norm(A, ord=2, axis=(1, 2))))
