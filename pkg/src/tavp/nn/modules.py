"""Parameter containers and the small set of layers the model is built from."""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from .tensor import Tensor, concatenate, unfold

__all__ = [
    "Parameter",
    "Module",
    "ModuleList",
    "Linear",
    "Conv2d",
    "ConvTranspose2d",
    "LayerNorm",
    "MultiHeadAttention",
    "MLP",
    "trunc_normal",
    "bilinear_upsample_kernel",
]


def trunc_normal(shape: tuple[int, ...], std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal(0, std) resampled until every entry lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def bilinear_upsample_kernel(kernel: int) -> np.ndarray:
    """The classic bilinear filler for transposed-conv upsampling."""
    factor = (kernel + 1) // 2
    center = factor - 1 if kernel % 2 == 1 else factor - 0.5
    og = np.ogrid[:kernel, :kernel]
    return ((1 - np.abs(og[0] - center) / factor) * (1 - np.abs(og[1] - center) / factor)).astype(np.float64)


class Parameter(Tensor):
    def __init__(self, data, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad)


class Module:
    """Base container. Submodules and Parameters are discovered by attribute scan."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module]):
        self._items = list(modules)
        for i, m in enumerate(self._items):
            setattr(self, str(i), m)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True, std: float = 0.02):
        self.weight = Parameter(trunc_normal((in_dim, out_dim), std, rng))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d(Module):
    """2-d convolution on a single (C, H, W) image via im2col."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, bias: bool = True):
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, fan_in)))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None
        self.kernel = kernel
        self.stride = stride
        # default keeps spatial size at stride 1 for odd kernels
        self.padding = (kernel - 1) // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        x = x.pad2d(self.padding)
        cols = unfold(x, self.kernel, self.stride)
        h_out = (h + 2 * self.padding - self.kernel) // self.stride + 1
        w_out = (w + 2 * self.padding - self.kernel) // self.stride + 1
        out = (self.weight @ cols).reshape(self.weight.shape[0], h_out, w_out)
        if self.bias is not None:
            out = out + self.bias.reshape(-1, 1, 1)
        return out


class ConvTranspose2d(Module):
    """Block upsampler: transposed convolution restricted to kernel == stride.

    With non-overlapping kernels the op is a per-pixel linear map to a
    kernel x kernel block, which composes from matmul and reshapes.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 bias: bool = True, init: str = "bilinear"):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        if init == "bilinear":
            filt = bilinear_upsample_kernel(kernel)
            w = np.zeros((in_ch, out_ch, kernel, kernel))
            counts = np.bincount(np.arange(in_ch) % out_ch, minlength=out_ch)
            for ci in range(in_ch):
                co = ci % out_ch
                w[ci, co] = filt / counts[co]
        elif init == "normal":
            fan_in = in_ch
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(in_ch, out_ch, kernel, kernel))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w.reshape(in_ch, out_ch * kernel * kernel))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        k, co = self.kernel, self.out_ch
        flat = x.transpose((1, 2, 0)).reshape(h * w, c)
        blocks = (flat @ self.weight).reshape(h, w, co, k, k)
        out = blocks.transpose((2, 0, 3, 1, 4)).reshape(co, h * k, w * k)
        if self.bias is not None:
            out = out + self.bias.reshape(-1, 1, 1)
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.gamma + self.beta


class MultiHeadAttention(Module):
    """Scaled dot-product attention; query and key/value sides may differ in width."""

    def __init__(self, q_dim: int, kv_dim: int, attn_dim: int, out_dim: int,
                 heads: int, rng: np.random.Generator):
        if attn_dim % heads != 0:
            raise ValueError("attn_dim must be divisible by heads")
        self.heads = heads
        self.head_dim = attn_dim // heads
        self.wq = Linear(q_dim, attn_dim, rng)
        self.wk = Linear(kv_dim, attn_dim, rng)
        self.wv = Linear(kv_dim, attn_dim, rng)
        self.wo = Linear(attn_dim, out_dim, rng)

    def forward(self, query: Tensor, keyvalue: Tensor) -> Tensor:
        nq = query.shape[0]
        nk = keyvalue.shape[0]
        h, d = self.heads, self.head_dim

        def split(t: Tensor, n: int) -> Tensor:
            return t.reshape(n, h, d).transpose((1, 0, 2))

        q = split(self.wq(query), nq)
        k = split(self.wk(keyvalue), nk)
        v = split(self.wv(keyvalue), nk)
        scores = (q @ k.transpose((0, 2, 1))) * (1.0 / np.sqrt(d))
        attn = scores.softmax(axis=-1)
        mixed = (attn @ v).transpose((1, 0, 2)).reshape(nq, h * d)
        return self.wo(mixed)


class MLP(Module):
    def __init__(self, dims: Sequence[int], rng: np.random.Generator,
                 activation: Callable[[Tensor], Tensor] | None = None):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.layers = ModuleList([Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)])
        self.activation = activation if activation is not None else Tensor.relu

    def forward(self, x: Tensor) -> Tensor:
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n - 1:
                x = self.activation(x)
        return x
