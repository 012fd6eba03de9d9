"""Small dense-tensor layers with hand-derived backward passes.

Every block caches what it needs in ``forward`` and accumulates parameter
gradients in ``backward``, returning the gradient with respect to its input.
Arrays are plain numpy arrays; precision follows the parameters (float32 for
training and rendering, float64 for gradient checks).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import ConfigError, OptimConfig


class Param:
    """A trainable array with its gradient and AdamW moments."""

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)


class Module:
    """Base class; parameters are discovered from Param, Module and list-of-Module attributes."""

    def named_params(self) -> list[tuple[str, Param]]:
        out = []
        for name, obj in vars(self).items():
            if isinstance(obj, Param):
                out.append((name, obj))
            elif isinstance(obj, Module):
                out += [(f"{name}.{n}", p) for n, p in obj.named_params()]
            elif isinstance(obj, list) and obj and isinstance(obj[0], Module):
                for i, m in enumerate(obj):
                    out += [(f"{name}.{i}.{n}", p) for n, p in m.named_params()]
        return out

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def astype(self, dtype):
        for p in self.params():
            p.astype(dtype)
        return self

    def num_params(self) -> int:
        return sum(p.value.size for p in self.params())


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """y = x @ W + b with W stored as [in, out]."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 dtype=np.float32, zero: bool = False):
        if zero or rng is None:
            self.W = Param(np.zeros((n_in, n_out), dtype))
            self.b = Param(np.zeros(n_out, dtype))
        else:
            self.W = Param(uniform_init(rng, (n_in, n_out), n_in, dtype))
            self.b = Param(uniform_init(rng, (n_out,), n_in, dtype))
        self._x = None

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_out(self):
        return self.W.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise ConfigError(f"linear expects width {self.n_in}, got {x.shape[-1]}")
        self._x = x
        y = x @ self.W.value
        y += self.b.value
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        x2 = self._x.reshape(-1, self.n_in)
        g2 = g.reshape(-1, self.n_out)
        self.W.grad += x2.T @ g2
        self.b.grad += g2.sum(axis=0)
        return g @ self.W.value.T


def linear_forward(x, W, b):
    x, W, b = np.asarray(x), np.asarray(W), np.asarray(b)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ConfigError(f"shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


class Conv1d(Module):
    """Same-length 1-D cross-correlation over [channels, time] inputs."""

    def __init__(self, ch_in: int, ch_out: int, k: int, rng: np.random.Generator | None = None,
                 dtype=np.float32, zero: bool = False):
        if k % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {k}")
        fan_in = ch_in * k
        if zero or rng is None:
            self.K = Param(np.zeros((ch_out, ch_in, k), dtype))
            self.b = Param(np.zeros(ch_out, dtype))
        else:
            self.K = Param(uniform_init(rng, (ch_out, ch_in, k), fan_in, dtype))
            self.b = Param(uniform_init(rng, (ch_out,), fan_in, dtype))
        self._cols = None
        self._T = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        ch_out, ch_in, k = self.K.shape
        if x.ndim != 2 or x.shape[0] != ch_in:
            raise ConfigError(f"conv expects [{ch_in}, T], got {list(x.shape)}")
        pad = (k - 1) // 2
        xp = np.pad(x, ((0, 0), (pad, pad)))
        # cols[c, t, j] = xp[c, t + j]
        cols = sliding_window_view(xp, k, axis=1)
        self._cols = cols
        self._T = x.shape[1]
        return np.einsum("oik,itk->ot", self.K.value, cols) + self.b.value[:, None]

    def backward(self, g: np.ndarray) -> np.ndarray:
        ch_out, ch_in, k = self.K.shape
        pad = (k - 1) // 2
        self.K.grad += np.einsum("ot,itk->oik", g, self._cols)
        self.b.grad += g.sum(axis=1)
        dxp = np.zeros((ch_in, self._T + 2 * pad), dtype=g.dtype)
        for j in range(k):
            dxp[:, j:j + self._T] += self.K.value[:, :, j].T @ g
        return dxp[:, pad:pad + self._T]


def conv1d_forward(x, kernels, b):
    kernels = np.asarray(kernels, dtype=float)
    conv = Conv1d(kernels.shape[1], kernels.shape[0], kernels.shape[2], dtype=kernels.dtype)
    conv.K.value[...] = kernels
    conv.b.value[...] = b
    return conv.forward(np.asarray(x, dtype=kernels.dtype))


def silu(x):
    """x * sigmoid(x), finite for large negative inputs."""
    with np.errstate(over="ignore"):
        return x / (1 + np.exp(-x))


def silu_(x: np.ndarray) -> np.ndarray:
    """In-place SiLU for inference buffers."""
    with np.errstate(over="ignore"):
        e = np.negative(x)
        np.exp(e, out=e)
        e += 1
        np.divide(x, e, out=x)
    return x


class SiLU(Module):
    def __init__(self):
        self._x = None
        self._s = None

    def forward(self, x):
        with np.errstate(over="ignore"):
            s = np.negative(x)
            np.exp(s, out=s)
            s += 1
            np.reciprocal(s, out=s)
        self._x, self._s = x, s
        return x * s

    def backward(self, g):
        x, s = self._x, self._s
        return g * (s * (1 + x * (1 - s)))


class Tanh(Module):
    def __init__(self, scale: float = 1.0):
        self.scale = scale
        self._y = None

    def forward(self, x):
        self._y = np.tanh(x)
        return self.scale * self._y

    def backward(self, g):
        return g * self.scale * (1 - self._y ** 2)


@dataclass
class LrSchedule:
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    total_epochs: int = 100


def cosine_lr(epoch: int, sched: LrSchedule) -> float:
    if not 0 <= epoch <= sched.total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    frac = epoch / sched.total_epochs if sched.total_epochs else 1.0
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1 + math.cos(math.pi * frac))


class AdamW:
    """AdamW with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: list[Param], betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    @classmethod
    def from_config(cls, params, cfg: OptimConfig):
        return cls(params, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p in self.params:
            dt = p.value.dtype.type
            if self.weight_decay:
                p.value -= dt(lr * self.weight_decay) * p.value
            p.m *= dt(b1)
            p.m += dt(1 - b1) * p.grad
            p.v *= dt(b2)
            p.v += dt(1 - b2) * p.grad * p.grad
            m_hat = p.m / dt(c1)
            v_hat = p.v / dt(c2)
            p.value -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))


def adamw_step(params: list[Param], lr: float, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=1e-2, step: int = 0) -> int:
    """Functional single step; ``step`` is the number of steps already taken."""
    opt = AdamW(params, betas, eps, weight_decay)
    opt.t = step
    opt.step(lr)
    return opt.t


def grad_check(loss_and_grad, params: list[Param], eps: float = 1e-5, n_probe: int | None = 8,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad()`` must return the scalar loss and leave fresh gradients
    in ``params``. Up to ``n_probe`` entries per parameter are probed (all when
    None). The relative error uses a floor of 1e-3 of the largest gradient in
    the probe so that near-zero entries do not dominate.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss_and_grad()
    grads = [p.grad.copy() for p in params]
    analytic, numeric = [], []
    for p, g in zip(params, grads):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if n_probe is not None and flat.size > n_probe:
            idx = rng.choice(flat.size, n_probe, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_and_grad()
            flat[i] = orig - eps
            lm = loss_and_grad()
            flat[i] = orig
            analytic.append(g.reshape(-1)[i])
            numeric.append((lp - lm) / (2 * eps))
    for p in params:
        p.zero_grad()
    a, n = np.array(analytic), np.array(numeric)
    floor = 1e-3 * max(np.abs(a).max(), np.abs(n).max(), 1e-300)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


@contextmanager
def threads(n: int | None):
    """Pin BLAS worker threads; ``threads(1)`` is the deterministic baseline."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield
