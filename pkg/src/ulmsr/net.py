"""Deep unrolled ISTA network for dense microbubble localization.

Block ``k`` computes ``z_k = S(z_{k-1} + W_k * u - V_k * z_{k-1}; rho_k)``
where ``u = W_in * upsample(x)`` is the encoded LR input, ``*`` is 2-D
"same" convolution with zero boundary, ``S`` is soft thresholding (two-sided
in every block but the last, one-sided in the last) and
``rho_k = softplus(theta_k)``.

Convolutions run in the Fourier domain on a zero-padded canvas large
enough that circular wrap-around never reaches the HR support, so they are
exact linear convolutions. Gradients are accumulated by hand in reverse
order; the soft-threshold derivative at the kink and the subgradient of
``|.|`` at zero are both taken as 0.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .grid import (
    STREAM_INIT,
    STREAM_TRAIN,
    STREAM_VALID,
    FrameSequence,
    GridSpec,
    InvalidParameterError,
    LocalizationSet,
    PsfModel,
    SeedSpec,
)
from .ista import ForwardOp, power_iteration_L
from .io import FormatError, read_json, write_bytes, write_json
from . import simgen

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


@dataclass(frozen=True)
class NetConfig:
    n_blocks: int = 9
    kernel_size: int = 11
    encoder_size: int = 11
    init: str = "psf"
    init_sigma_lr: float = 1.1
    init_threshold: float = 0.01

    def __post_init__(self):
        if self.n_blocks < 1:
            raise InvalidParameterError("n_blocks must be >= 1")
        for s in (self.kernel_size, self.encoder_size):
            if s < 1 or s % 2 == 0:
                raise InvalidParameterError("kernel sizes must be odd and positive")
        if self.init not in ("psf", "random"):
            raise InvalidParameterError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.01
    gauss_sigma_px: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr: float = 5e-4
    batch_size: int = 64
    epochs: int = 1000
    steps_per_epoch: int = 50
    val_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise InvalidParameterError("ADAM betas must lie in (0, 1)")
        if self.lr < 0 or self.lam < 0 or self.adam_eps <= 0 or self.gauss_sigma_px <= 0:
            raise InvalidParameterError("lr, lambda must be >= 0; eps, gauss sigma > 0")
        if min(self.batch_size, self.epochs, self.steps_per_epoch, self.val_size) < 1:
            raise InvalidParameterError("batch size, epochs, steps and validation size must be >= 1")


PARAM_NAMES = ("w_in", "w", "v", "theta")


@dataclass(eq=False)
class NetParams:
    """Learnable tensors; ``w``/``v`` have shape ``(K, s, s)``, ``theta`` ``(K,)``.

    Kernels are stored in units of a fixed per-tensor ``scale``: the
    convolution actually applied is ``scale[name] * tensor``. This keeps
    the learnable values of order one so that ADAM's step size means the
    same thing for wide, small-valued PSF kernels and for thresholds.
    """

    w_in: np.ndarray
    w: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    scale: dict = field(default_factory=lambda: {"w_in": 1.0, "w": 1.0, "v": 1.0})

    def __post_init__(self):
        self.w = np.asarray(self.w)
        self.v = np.asarray(self.v)
        self.theta = np.asarray(self.theta)
        self.w_in = np.asarray(self.w_in)
        self.scale = {n: float(self.scale.get(n, 1.0)) for n in ("w_in", "w", "v")}
        k = self.theta.shape[0]
        if k < 1 or self.w.shape[0] != k or self.v.shape[0] != k or self.w.shape != self.v.shape:
            raise InvalidParameterError("inconsistent block parameter shapes")
        for a in (self.w_in, self.w[0]):
            if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] % 2 == 0:
                raise InvalidParameterError("kernels must be odd-sized squares")

    @property
    def n_blocks(self) -> int:
        return self.theta.shape[0]

    @property
    def rho(self) -> np.ndarray:
        return softplus(self.theta)

    @property
    def dtype(self):
        return self.w.dtype

    def kernel(self, name: str) -> np.ndarray:
        """Effective convolution kernel(s) for ``w_in``, ``w`` or ``v``."""
        return (self.scale[name] * getattr(self, name)).astype(self.dtype)

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def astype(self, dtype) -> "NetParams":
        return NetParams(**{n: a.astype(dtype) for n, a in self.tensors().items()}, scale=self.scale)

    def copy(self) -> "NetParams":
        return self.astype(self.dtype)

    def map(self, fn, other=None) -> "NetParams":
        if other is None:
            return NetParams(**{n: fn(a) for n, a in self.tensors().items()}, scale=self.scale)
        return NetParams(**{n: fn(a, getattr(other, n)) for n, a in self.tensors().items()}, scale=self.scale)

    def zeros_like(self) -> "NetParams":
        return self.map(np.zeros_like)


def _centered_profile(op: ForwardOp, n: int) -> np.ndarray:
    """Phase-averaged row of ``A^T A`` around the HR center, length ``n``."""
    a = op.a_x
    gram = a.T @ a
    r = op.grid.upsample
    c = n // 2
    mid = gram.shape[0] // 2 - r // 2
    rows = []
    for p in range(mid, mid + r):
        rows.append(gram[p, p - c:p + c + 1])
    return np.mean(rows, axis=0)


def init_params(grid: GridSpec, cfg: NetConfig = NetConfig(), seed: SeedSpec | int = 0, dtype=np.float32) -> NetParams:
    """ISTA-derived initialization (or small random kernels with ``init='random'``).

    ``W_in`` is the PSF adjoint scaled by ``1/L``, ``W_k`` a delta and ``V_k``
    the PSF autocorrelation scaled by ``1/L``.
    """
    if not isinstance(seed, SeedSpec):
        seed = SeedSpec(seed)
    k, s, s_in = cfg.n_blocks, cfg.kernel_size, cfg.encoder_size
    theta = np.full(k, float(softplus_inv(cfg.init_threshold)))
    if cfg.init == "random":
        rng = seed.rng(STREAM_INIT)
        return NetParams(
            0.05 * rng.standard_normal((s_in, s_in)),
            0.05 * rng.standard_normal((k, s, s)),
            0.05 * rng.standard_normal((k, s, s)),
            theta,
        ).astype(dtype)

    r = grid.upsample
    probe = grid.with_shape(max(16, min(grid.lr_width, 64)), max(16, min(grid.lr_height, 64)))
    op = ForwardOp(probe, PsfModel(cfg.init_sigma_lr))
    mu = 1.0 / power_iteration_L(op, 100, seed)
    half = (r - 1) / 2.0 - (r - 1) // 2
    d = np.arange(s_in) - s_in // 2
    g1 = np.exp(-((d - half) / r) ** 2 / (2 * cfg.init_sigma_lr ** 2))
    w_in = mu * np.outer(g1, g1)
    delta = np.zeros((s, s))
    delta[s // 2, s // 2] = 1.0
    prof = _centered_profile(op, s)
    v = mu * np.outer(prof, prof)
    scale = {"w_in": float(np.abs(w_in).max()), "w": 1.0, "v": float(np.abs(v).max())}
    return NetParams(w_in / scale["w_in"], np.repeat(delta[None], k, 0), np.repeat(v[None], k, 0) / scale["v"],
                     theta, scale).astype(dtype)


class _Plan:
    """Padded FFT canvas for batched same-size convolutions on the HR grid."""

    def __init__(self, hr_shape, kernel_half: int, upsample: int):
        self.hr_shape = tuple(hr_shape)
        h, w = self.hr_shape
        self.shape = (sfft.next_fast_len(h + kernel_half + 1, real=True),
                      sfft.next_fast_len(w + kernel_half + 1, real=True))
        self.upsample = upsample
        self.offset = (upsample - 1) // 2

    def fft(self, x):
        return sfft.rfft2(x, self.shape)

    def ifft(self, xh):
        h, w = self.hr_shape
        return sfft.irfft2(xh, self.shape)[..., :h, :w]

    def kernel_fft(self, k):
        s = k.shape[-1]
        c = s // 2
        canvas = np.zeros(k.shape[:-2] + self.shape, dtype=k.dtype)
        canvas[..., :s, :s] = k
        canvas = np.roll(canvas, (-c, -c), axis=(-2, -1))
        return sfft.rfft2(canvas)

    def kernel_grad(self, corr_hat, s):
        """Extract lags ``-c..c`` of a summed correlation spectrum as an ``s x s`` kernel."""
        c = s // 2
        full = sfft.irfft2(corr_hat, self.shape)
        return np.roll(full, (c, c), axis=(-2, -1))[..., :s, :s]

    def upsample_zero(self, x_lr):
        b, h, w = x_lr.shape
        r, o = self.upsample, self.offset
        up = np.zeros((b,) + self.hr_shape, dtype=x_lr.dtype)
        up[:, o::r, o::r][:, :h, :w] = x_lr
        return up


@dataclass
class ForwardCache:
    up_hat: np.ndarray
    u_hat: np.ndarray
    pre: list = field(default_factory=list)
    z_hat: list = field(default_factory=list)
    out: np.ndarray | None = None


def _plan_for(params: NetParams, x_lr, upsample: int) -> _Plan:
    h, w = x_lr.shape[-2:]
    half = max(params.w.shape[-1], params.w_in.shape[-1]) // 2
    return _Plan((h * upsample, w * upsample), half, upsample)


def forward(x_lr, params: NetParams, grid: GridSpec | int, return_cache: bool = False):
    """Network output on the HR grid for one LR frame or a ``(B, h, w)`` batch."""
    upsample = grid.upsample if isinstance(grid, GridSpec) else int(grid)
    x = np.asarray(x_lr, dtype=params.dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise InvalidParameterError(f"expected (B, h, w) input, got shape {x.shape}")
    if isinstance(grid, GridSpec) and x.shape[1:] != grid.lr_shape:
        raise InvalidParameterError(f"input shape {x.shape[1:]} does not match grid {grid.lr_shape}")
    plan = _plan_for(params, x, upsample)
    w_in_hat = plan.kernel_fft(params.kernel("w_in"))
    w_hat = plan.kernel_fft(params.kernel("w"))
    v_hat = plan.kernel_fft(params.kernel("v"))
    rho = params.rho.astype(params.dtype)
    k_last = params.n_blocks - 1

    up_hat = plan.fft(plan.upsample_zero(x))
    u = plan.ifft(up_hat * w_in_hat)
    u_hat = plan.fft(u)
    cache = ForwardCache(up_hat, u_hat)
    z = None
    for k in range(params.n_blocks):
        if z is None:
            a = plan.ifft(u_hat * w_hat[k])
            cache.z_hat.append(None)
        else:
            zh = plan.fft(z)
            a = z + plan.ifft(u_hat * w_hat[k] - zh * v_hat[k])
            cache.z_hat.append(zh)
        cache.pre.append(a)
        if k == k_last:
            z = np.maximum(a - rho[k], 0)
        else:
            z = np.sign(a) * np.maximum(np.abs(a) - rho[k], 0)
    cache.out = z
    out = z[0] if single else z
    return (out, cache, plan) if return_cache else out


def blur_target(y, sigma_px: float = 1.0):
    """Gaussian filter G of the loss: radius 3 sigma, unit sum, zero boundary."""
    y = np.asarray(y, dtype=float)
    axes = (-2, -1)
    return ndimage.gaussian_filter(y, sigma_px, mode="constant", cval=0.0, truncate=3.0, axes=axes)


def loss(f, y_target, cfg: TrainConfig = TrainConfig()) -> float:
    """``||f - G*y||^2 + lam * ||f||_1`` for one HR frame."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y_target, dtype=float)
    if f.shape != y.shape:
        raise InvalidParameterError(f"shape mismatch {f.shape} vs {y.shape}")
    r = f - blur_target(y, cfg.gauss_sigma_px)
    return float(np.sum(r * r) + cfg.lam * np.sum(np.abs(f)))


def backward(x_lr, y_target, params: NetParams, cfg: TrainConfig, grid: GridSpec | int, blurred: bool = False):
    """Mean batch loss and its exact gradient with respect to every parameter.

    ``y_target`` holds the sparse HR targets; pass ``blurred=True`` if the
    Gaussian filter has already been applied.
    """
    x = np.asarray(x_lr, dtype=params.dtype)
    if x.ndim == 2:
        x = x[None]
        y_target = np.asarray(y_target)[None]
    b = x.shape[0]
    out, cache, plan = forward(x, params, grid, return_cache=True)
    t = np.asarray(y_target, dtype=params.dtype)
    if not blurred:
        t = blur_target(t, cfg.gauss_sigma_px).astype(params.dtype)
    if t.shape != out.shape:
        raise InvalidParameterError(f"target shape {t.shape} != output shape {out.shape}")
    resid = out - t
    per_sample = np.sum(resid * resid, axis=(1, 2), dtype=np.float64) + cfg.lam * np.sum(np.abs(out), axis=(1, 2), dtype=np.float64)
    value = float(np.mean(per_sample))

    s, s_in = params.w.shape[-1], params.w_in.shape[-1]
    w_hat = plan.kernel_fft(params.kernel("w"))
    v_hat = plan.kernel_fft(params.kernel("v"))
    rho = params.rho.astype(params.dtype)
    g = ((2.0 * resid + cfg.lam * np.sign(out)) / b).astype(params.dtype)
    grads = params.zeros_like()
    du_hat = np.zeros_like(cache.u_hat)
    k_last = params.n_blocks - 1
    for k in reversed(range(params.n_blocks)):
        a = cache.pre[k]
        if k == k_last:
            active = a > rho[k]
            ga = g * active
            grads.theta[k] = -np.sum(ga, dtype=np.float64)
        else:
            active = np.abs(a) > rho[k]
            ga = g * active
            grads.theta[k] = -np.sum(ga * np.sign(a), dtype=np.float64)
        ga_hat = plan.fft(ga)
        grads.w[k] = plan.kernel_grad(np.sum(ga_hat * np.conj(cache.u_hat), axis=0), s)
        du_hat += ga_hat * np.conj(w_hat[k])
        if k > 0:
            grads.v[k] = -plan.kernel_grad(np.sum(ga_hat * np.conj(cache.z_hat[k]), axis=0), s)
            g = ga - plan.ifft(ga_hat * np.conj(v_hat[k]))
    du = plan.ifft(du_hat)
    grads.w_in[...] = plan.kernel_grad(np.sum(plan.fft(du) * np.conj(cache.up_hat), axis=0), s_in)
    grads.theta *= sigmoid(params.theta).astype(params.dtype)
    for name, sc in params.scale.items():
        getattr(grads, name)[...] *= sc
    return value, grads


# ---------------------------------------------------------------------------
# optimization


@dataclass(eq=False)
class AdamState:
    m: NetParams
    v: NetParams
    t: int = 0

    @classmethod
    def zeros(cls, params: NetParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(params: NetParams, grads: NetParams, state: AdamState, cfg: TrainConfig, t: int | None = None):
    """One bias-corrected ADAM update. Returns ``(params, state)``."""
    t = state.t + 1 if t is None else t
    if t < 1:
        raise InvalidParameterError("ADAM step index must be >= 1")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = state.m.map(lambda m_, g: b1 * m_ + (1 - b1) * g, grads)
    v = state.v.map(lambda v_, g: b2 * v_ + (1 - b2) * g * g, grads)
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t

    def upd(p, name):
        mh = getattr(m, name) / c1
        vh = getattr(v, name) / c2
        return (p - cfg.lr * mh / (np.sqrt(vh) + cfg.adam_eps)).astype(p.dtype)

    new = NetParams(**{n: upd(a, n) for n, a in params.tensors().items()}, scale=params.scale)
    return new, AdamState(m, v, t)


@dataclass(eq=False)
class Checkpoint:
    params: NetParams
    train_config: TrainConfig
    net_config: NetConfig
    grid: GridSpec
    step: int
    seed: int
    distributions: simgen.SampleDistributions = field(default_factory=simgen.SampleDistributions)
    history: list = field(default_factory=list)

    def manifest(self) -> dict:
        tensors, offset = [], 0
        for name, arr in self.params.tensors().items():
            tensors.append({"name": name, "shape": list(arr.shape), "dtype": "f32", "offset": offset})
            offset += arr.size * 4
        return {
            "format": "ulmsr-checkpoint",
            "version": 1,
            "tensors": tensors,
            "train_config": asdict(self.train_config),
            "net_config": asdict(self.net_config),
            "grid": asdict(self.grid),
            "distributions": asdict(self.distributions),
            "kernel_scale": {k: float(v) for k, v in self.params.scale.items()},
            "step": self.step,
            "seed": self.seed,
            "history": [[int(e), float(tr), float(va)] for e, tr, va in self.history],
        }

    def blob(self) -> bytes:
        return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in self.params.tensors().values())

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>.json`` (manifest) and ``<path>.bin`` (f32 LE tensors)."""
        path = Path(path)
        base = path.with_suffix("") if path.suffix in (".json", ".bin") else path
        man, blob = base.with_suffix(".json"), base.with_suffix(".bin")
        data = self.blob()
        m = self.manifest()
        m["blob"] = blob.name
        m["blob_sha256"] = hashlib.sha256(data).hexdigest()
        write_bytes(blob, data)
        write_json(man, m)
        return man, blob

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        base = path.with_suffix("") if path.suffix in (".json", ".bin") else path
        m = read_json(base.with_suffix(".json"))
        if m.get("format") != "ulmsr-checkpoint":
            raise FormatError(f"{path}: not a checkpoint manifest")
        data = (base.parent / m.get("blob", base.with_suffix(".bin").name)).read_bytes()
        if "blob_sha256" in m and hashlib.sha256(data).hexdigest() != m["blob_sha256"]:
            raise FormatError(f"{path}: checkpoint blob checksum mismatch")
        arrays = {}
        for t in m["tensors"]:
            n = int(np.prod(t["shape"], dtype=np.int64))
            arrays[t["name"]] = np.frombuffer(data, "<f4", n, t["offset"]).reshape(t["shape"]).astype(np.float32)
        dist = m.get("distributions")
        d = {k: tuple(v) for k, v in dist.items()} if dist else {}
        return cls(
            NetParams(**arrays, scale=m.get("kernel_scale", {})),
            TrainConfig(**m["train_config"]),
            NetConfig(**m["net_config"]),
            GridSpec(**m["grid"]),
            m["step"],
            m["seed"],
            simgen.SampleDistributions(**d),
            [(int(e), float(tr), float(va)) for e, tr, va in m.get("history", [])],
        )


def _blurred_batch(dist, grid, seed, stream, index, size, sigma, dtype):
    x, y, _ = simgen.gen_batch(dist, grid, seed, stream, index, size)
    return x.astype(dtype), blur_target(y, sigma).astype(dtype)


def validation_set(dist, grid, cfg: TrainConfig, dtype=np.float32):
    return _blurred_batch(dist, grid, SeedSpec(cfg.seed), STREAM_VALID, 0, cfg.val_size, cfg.gauss_sigma_px, dtype)


def eval_loss(params: NetParams, x, t, cfg: TrainConfig, grid, chunk: int = 32) -> float:
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        out = forward(x[i:i + chunk], params, grid)
        r = out - t[i:i + chunk]
        total += float(np.sum(r * r, dtype=np.float64) + cfg.lam * np.sum(np.abs(out), dtype=np.float64))
    return total / x.shape[0]


def train(dist: simgen.SampleDistributions, grid: GridSpec, cfg: TrainConfig = TrainConfig(),
          net_cfg: NetConfig = NetConfig(), params: NetParams | None = None, progress=None) -> Checkpoint:
    """Train on freshly synthesized batches; one substream per step.

    The checkpoint's ``history`` holds ``(epoch, train_loss, val_loss)`` rows.
    Raises :class:`DivergenceError` on a non-finite loss.
    """
    seed = SeedSpec(cfg.seed)
    if params is None:
        params = init_params(grid, net_cfg, seed)
    state = AdamState.zeros(params)
    xv, tv = validation_set(dist, grid, cfg, params.dtype)
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        running = 0.0
        for _ in range(cfg.steps_per_epoch):
            x, t = _blurred_batch(dist, grid, seed, STREAM_TRAIN, step, cfg.batch_size, cfg.gauss_sigma_px,
                                  params.dtype)
            value, grads = backward(x, t, params, cfg, grid, blurred=True)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite training loss at step {step}")
            step += 1
            params, state = adam_step(params, grads, state, cfg, step)
            running += value
        val = eval_loss(params, xv, tv, cfg, grid)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite validation loss after epoch {epoch}")
        history.append((epoch, running / cfg.steps_per_epoch, val))
        log.info("epoch %d train %.6f val %.6f", epoch, history[-1][1], val)
        if progress is not None:
            progress(epoch, history[-1][1], val)
    return Checkpoint(params, cfg, net_cfg, grid, step, cfg.seed, dist, history)


# ---------------------------------------------------------------------------
# inference


@dataclass(frozen=True)
class InferConfig:
    percentile: float = 99.9
    detect_threshold: float = 0.1
    min_value: float = 0.0
    batch: int = 32


def normalize_sequence(frames, percentile: float = 99.9) -> np.ndarray:
    """Scale by the sequence's ``percentile`` intensity and clip to [0, 1]."""
    frames = np.asarray(frames, dtype=float)
    if frames.size == 0:
        return frames
    ref = np.percentile(frames, percentile)
    if not ref > 0:
        return np.zeros_like(frames)
    return np.clip(frames / ref, 0.0, 1.0)


def detect_peaks(out, grid: GridSpec, frame_index: int, detect_threshold: float = 0.1,
                 min_value: float = 0.0) -> LocalizationSet:
    """Local maxima above ``detect_threshold * max`` refined by a 3x3 centroid."""
    out = np.asarray(out, dtype=float)
    peak = out.max() if out.size else 0.0
    if not peak > 0:
        return LocalizationSet()
    thr = max(detect_threshold * peak, min_value)
    is_max = (out == ndimage.maximum_filter(out, size=3, mode="constant", cval=0.0)) & (out > thr)
    rows, cols = np.nonzero(is_max)
    if rows.size == 0:
        return LocalizationSet()
    pad = np.pad(np.maximum(out, 0), 1)
    dy, dx = np.mgrid[-1:2, -1:2]
    xs, ys = np.empty(rows.size), np.empty(rows.size)
    for i, (r, c) in enumerate(zip(rows, cols)):
        win = pad[r:r + 3, c:c + 3]
        tot = win.sum()
        xs[i] = c + np.sum(win * dx) / tot
        ys[i] = r + np.sum(win * dy) / tot
    x_um, y_um = grid.hr_to_um(xs, ys)
    return LocalizationSet(np.full(rows.size, frame_index), x_um, y_um, out[rows, cols])


def infer_sequence(ceus, ckpt: Checkpoint, cfg: InferConfig = InferConfig(), normalize: bool = True):
    """Run the network on every frame. Returns ``(hr_frames, localizations)``."""
    frames = ceus.frames if isinstance(ceus, FrameSequence) else np.asarray(ceus)
    grid = ckpt.grid
    if frames.ndim != 3:
        raise InvalidParameterError("expected a (T, h, w) stack")
    if isinstance(ceus, FrameSequence) and not math.isclose(ceus.pixel_um, grid.lr_pixel_um, rel_tol=1e-9):
        raise InvalidParameterError(f"sequence pixel {ceus.pixel_um} um != checkpoint LR pixel {grid.lr_pixel_um} um")
    frame_grid = grid.with_shape(frames.shape[2], frames.shape[1])
    x = normalize_sequence(frames, cfg.percentile) if normalize else frames
    outs = np.zeros((frames.shape[0],) + frame_grid.hr_shape, dtype=np.float32)
    parts = []
    for i in range(0, frames.shape[0], cfg.batch):
        o = forward(x[i:i + cfg.batch], ckpt.params, frame_grid)
        outs[i:i + cfg.batch] = o
        for j in range(o.shape[0]):
            parts.append(detect_peaks(o[j], frame_grid, i + j, cfg.detect_threshold, cfg.min_value))
    return outs, LocalizationSet.concat(parts)


def loss_curve_rows(history):
    return [(e, repr(float(tr)), repr(float(va))) for e, tr, va in history]


def params_digest(params: NetParams) -> str:
    return hashlib.sha256(json.dumps({n: a.tolist() for n, a in params.tensors().items()}).encode()).hexdigest()
