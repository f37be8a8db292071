"""Ordered, named parameter collections."""

from __future__ import annotations

from typing import Callable, Iterator, Mapping

import numpy as np

from .tensor import Tensor

__all__ = ["ParamSet"]


class ParamSet:
    """Ordered map name -> Tensor with deterministic lexicographic iteration.

    Names are unique; iteration order is always sorted by name so that
    optimizer state, checkpoints, and gradient collection line up
    deterministically.
    """

    def __init__(self, items: Mapping[str, Tensor] | None = None, requires_grad: bool = False):
        self._items: dict[str, Tensor] = {}
        if items:
            for name in sorted(items):
                self.add(name, items[name], requires_grad=requires_grad)

    def add(self, name: str, value, requires_grad: bool | None = None) -> None:
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        if isinstance(value, Tensor) and requires_grad is None:
            t = value
        else:
            rg = bool(requires_grad)
            data = value.data if isinstance(value, Tensor) else value
            t = Tensor(data, requires_grad=rg)
        self._items[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return sorted(self._items)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in sorted(self._items):
            yield name, self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def map(self, fn: Callable[[str, Tensor], np.ndarray | Tensor], requires_grad: bool = False) -> "ParamSet":
        out = ParamSet()
        for name, t in self.items():
            out.add(name, fn(name, t), requires_grad=requires_grad)
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.items()}

    def astype(self, dtype, requires_grad: bool = False) -> "ParamSet":
        return self.map(lambda _, t: t.data.astype(dtype), requires_grad=requires_grad)

    def copy(self, requires_grad: bool = False) -> "ParamSet":
        return self.map(lambda _, t: t.data, requires_grad=requires_grad)

    def num_values(self) -> int:
        return sum(t.size for _, t in self.items())
