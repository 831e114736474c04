"""PSF forward model and classic ISTA for l1-regularized sparse recovery.

The forward operator maps an HR image to the LR grid by blurring with the
PSF and sampling at LR pixel centers. Because the PSF is a separable
Gaussian, ``H`` factors as ``A_y (.) A_x^T`` with small 1-D matrices whose
rows are the PSF sampled on the HR grid around each LR pixel center, which
is convolution followed by stride-``r`` subsampling without ever storing
the full dictionary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import STREAM_POWER, GridSpec, InvalidParameterError, PsfModel, SeedSpec, hr_to_lr_coords


class StepSizeError(RuntimeError):
    """ISTA objective increased: the step size exceeds 1/L."""


def soft_threshold(v, tau, nonneg: bool = False):
    """``sign(v) * max(|v| - tau, 0)``, or ``max(v - tau, 0)`` when ``nonneg``."""
    if np.any(np.asarray(tau) < 0):
        raise InvalidParameterError("threshold must be non-negative")
    v = np.asarray(v)
    if nonneg:
        return np.maximum(v - tau, 0.0)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


class ForwardOp:
    """Linear map ``H``: HR image -> LR image, with exact adjoint."""

    def __init__(self, grid: GridSpec, psf: PsfModel):
        self.grid = grid
        self.psf = psf
        self.a_y = self._axis_matrix(grid.lr_height)
        self.a_x = self._axis_matrix(grid.lr_width)
        self.scale = float(psf.amplitude)

    def _axis_matrix(self, n_lr: int) -> np.ndarray:
        p = np.arange(n_lr * self.grid.upsample)
        centers, _ = hr_to_lr_coords(p, p, self.grid)
        return self.psf.profile(np.arange(n_lr)[:, None] - centers[None, :])

    @property
    def hr_shape(self):
        return self.grid.hr_shape

    @property
    def lr_shape(self):
        return self.grid.lr_shape

    def __call__(self, x):
        return self.scale * (self.a_y @ x @ self.a_x.T)

    apply = __call__

    def adjoint(self, y):
        return self.scale * (self.a_y.T @ y @ self.a_x)

    def gram(self, x):
        return self.adjoint(self.apply(x))

    def matrix(self) -> np.ndarray:
        """Explicit dictionary, rows and columns in row-major pixel order."""
        if self.grid.hr_width * self.grid.hr_height > 32 * 32:
            raise InvalidParameterError("explicit matrix mode is limited to HR grids of at most 32x32")
        return self.scale * np.kron(self.a_y, self.a_x)

    def scaled(self, c: float) -> "ForwardOp":
        op = ForwardOp.__new__(ForwardOp)
        op.__dict__.update(self.__dict__)
        op.scale = self.scale * c
        return op


def power_iteration_L(op: ForwardOp, iters: int = 50, seed: SeedSpec | int = 0, return_history: bool = False):
    """Largest eigenvalue of ``H^T H`` by power iteration (Rayleigh quotients)."""
    if not isinstance(seed, SeedSpec):
        seed = SeedSpec(seed)
    x = seed.rng(STREAM_POWER).standard_normal(op.hr_shape)
    x /= np.linalg.norm(x)
    history = []
    for _ in range(iters):
        g = op.gram(x)
        history.append(float(np.sum(x * g)))
        nrm = np.linalg.norm(g)
        if nrm == 0:
            break
        x = g / nrm
    est = history[-1] if history else 0.0
    return (est, history) if return_history else est


@dataclass(frozen=True)
class IstaConfig:
    lam: float = 0.01
    mu: float | None = None
    max_iters: int = 5000
    tol: float = 1e-8
    nonneg: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidParameterError("lambda must be >= 0")
        if self.mu is not None and not self.mu > 0:
            raise InvalidParameterError("mu must be > 0")
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be >= 1")


def objective(y, x, op: ForwardOp, lam: float) -> float:
    r = y - op(x)
    return 0.5 * float(np.sum(r * r)) + lam * float(np.sum(np.abs(x)))


def ista_solve(y, op: ForwardOp, cfg: IstaConfig = IstaConfig(), L: float | None = None,
               return_history: bool = False):
    """Minimize ``0.5 ||y - Hx||^2 + lam ||x||_1`` from ``x0 = 0``.

    Stops when the relative iterate change drops below ``tol`` or the
    objective stops decreasing at rounding level; the returned history is
    non-increasing. Raises :class:`StepSizeError` on a real increase.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != op.lr_shape:
        raise InvalidParameterError(f"input shape {y.shape} != LR grid {op.lr_shape}")
    if L is None:
        L = power_iteration_L(op)
    mu = cfg.mu if cfg.mu is not None else 1.0 / L
    if mu * L > 1.0 + 1e-9:
        raise StepSizeError(f"mu={mu:g} exceeds 1/L={1.0 / L:g}")
    tau = mu * cfg.lam
    # one H and one H^T product per iteration: the residual of the accepted
    # iterate gives both its objective and the next gradient
    x = np.zeros(op.hr_shape)
    r = y.copy()
    obj = 0.5 * float(np.sum(r * r))
    history = [obj]
    for _ in range(cfg.max_iters):
        v = x + mu * op.adjoint(r)
        x_new = np.maximum(v - tau, 0.0) if cfg.nonneg else np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
        r_new = y - op(x_new)
        obj_new = 0.5 * float(np.sum(r_new * r_new)) + cfg.lam * float(np.sum(np.abs(x_new)))
        if obj_new > obj:
            if obj_new > obj + 1e-12 * max(abs(obj), 1.0):
                raise StepSizeError(f"objective increased {obj:.12g} -> {obj_new:.12g} (mu={mu:g}, L={L:g})")
            break  # stalled at rounding level: converged
        history.append(obj_new)
        change = np.linalg.norm(x_new - x)
        scale = np.linalg.norm(x_new)
        x, r, obj = x_new, r_new, obj_new
        if change <= cfg.tol * scale or scale == 0:
            break
    return (x, history) if return_history else x
