from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from . import functional as F
from .errors import CheckpointError, ShapeError
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A trainable tensor. Always created in the current default dtype."""

    def __init__(self, data: np.ndarray, name: str = ""):
        super().__init__(data, requires_grad=True, dtype=get_default_dtype(), name=name)


class Module:
    """
    Base for every layer and model. Parameters, child modules and lists of
    either are discovered from instance attributes in assignment order, so
    parameter names and checkpoint order are stable.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # --- traversal
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix, self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{i}.")

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for prefix, module in self.named_modules():
            for name, value in vars(module).items():
                if isinstance(value, Parameter):
                    yield f"{prefix}{name}", value

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, module in self.named_modules():
            for name, value in module.buffers().items():
                yield f"{prefix}{name}", value

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state owned directly by this module (running statistics)."""
        return {}

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        raise CheckpointError(f"{type(self).__name__} has no buffer {name!r}")

    # --- modes
    def train(self, mode: bool = True) -> Module:
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> Module:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> Module:
        for p in self.parameters():
            p.requires_grad = True
        return self

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    # --- bookkeeping
    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def checksum(self) -> str:
        """sha256 over parameter names and raw bytes, in traversal order."""
        digest = hashlib.sha256()
        for name, p in self.named_parameters():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: arr.copy() for name, arr in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        modules = dict(self.named_modules())
        expected = set(params)
        missing = expected - set(state)
        if missing:
            raise CheckpointError(f"checkpoint is missing parameters: {', '.join(sorted(missing))}")
        for name, arr in state.items():
            if name in params:
                p = params[name]
                if arr.shape != p.shape:
                    raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
                p.data = np.array(arr, dtype=p.dtype, copy=True)
                continue
            prefix, _, leaf = name.rpartition(".")
            owner = modules.get(f"{prefix}." if prefix else "")
            if owner is None:
                raise CheckpointError(f"checkpoint entry {name!r} has no place in this model")
            owner.load_buffer(leaf, arr)


# ──────────────────────────────────────────────────────────────────────────────
# Layers
# ──────────────────────────────────────────────────────────────────────────────

class Conv(Module):
    """
    3×3 or 1×1 convolution, He-initialised. With `transposed=True` the kernel
    is stored (Kh, Kw, Cout, Cin) and applied through conv_transpose2d.
    """

    def __init__(self, cin: int, cout: int, kernel_size: int = 3, stride: int = 1,
                 bias: bool = True, transposed: bool = False,
                 rng: np.random.Generator | None = None, zero_init: bool = False,
                 padding: F.PaddingMode = "zero"):
        if kernel_size not in (1, 3):
            raise ShapeError(f"kernel size must be 1 or 3, got {kernel_size}")
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (kernel_size, kernel_size, cout, cin) if transposed else (kernel_size, kernel_size, cin, cout)
        if zero_init:
            w = np.zeros(shape)
        else:
            fan_in = kernel_size * kernel_size * cin
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.transposed = transposed
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        op = F.conv_transpose2d if self.transposed else F.conv2d
        return op(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))
        self.stats = F.RunningStats(momentum=momentum)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mode = "train" if self.training else "eval"
        return F.normalize(x, "batch", self.scale, self.shift, mode=mode, stats=self.stats, eps=self.eps)

    def buffers(self) -> dict[str, np.ndarray]:
        if not self.stats.ready:
            return {}
        return {"running_mean": self.stats.mean, "running_var": self.stats.var}

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        if value.shape != self.scale.shape:
            raise CheckpointError(f"{name}: buffer shape {value.shape} != {self.scale.shape}")
        if name == "running_mean":
            self.stats.mean = np.array(value, dtype=self.scale.dtype)
        elif name == "running_var":
            self.stats.var = np.array(value, dtype=self.scale.dtype)
        else:
            super().load_buffer(name, value)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.normalize(x, "layer", self.scale, self.shift, eps=self.eps)
