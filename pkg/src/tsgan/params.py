"""Named parameters, their Adam state, and the Adam update itself."""
from __future__ import annotations

from collections.abc import Iterator, Mapping

import numpy as np

from .autodiff import Tensor


class Parameter(Tensor):
    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, name: str, data: np.ndarray):
        data = np.array(data)
        dtype = np.float64 if data.dtype == np.float64 else np.float32
        super().__init__(data.astype(dtype, copy=False), requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParamStore(Mapping):
    """Ordered name -> Parameter registry.

    Models register their weights through :meth:`create`; optimizer groups
    are selected by name prefix (``store.group("disc0.")``).
    """

    def __init__(self, rng: np.random.Generator | None = None, dtype=np.float32):
        self._params: dict[str, Parameter] = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = dtype

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(name, np.asarray(data, dtype=self.dtype))
        self._params[name] = p
        return p

    def create(self, name: str, shape: tuple[int, ...], fan_in: int | None = None,
               init: str = "normal") -> Parameter:
        if init == "zeros":
            return self.add(name, np.zeros(shape))
        fan_in = fan_in if fan_in is not None else int(np.prod(shape[:-1])) or 1
        # He init for leaky-ReLU(0.2)
        std = np.sqrt(2.0 / (1.0 + 0.2 ** 2) / fan_in)
        return self.add(name, self.rng.normal(0.0, std, size=shape))

    def group(self, prefix: str) -> list[Parameter]:
        return [p for n, p in self._params.items() if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def astype(self, dtype) -> "ParamStore":
        """Deep copy with every value (and moment) cast to ``dtype``."""
        out = ParamStore(self.rng, dtype)
        for name, p in self._params.items():
            q = out.add(name, p.data.astype(dtype))
            q.adam_m = p.adam_m.astype(dtype)
            q.adam_v = p.adam_v.astype(dtype)
            q.step_count = p.step_count
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}


def adam_step(params: list[Parameter], lr: float, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam on each parameter, then clear its gradient.

    Each parameter keeps its own step counter, so groups that are stepped on
    different schedules stay independent. A missing gradient counts as zero.
    """
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        p.grad = None
