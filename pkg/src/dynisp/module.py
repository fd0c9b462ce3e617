"""Tiny parameter-container base shared by the trainable pieces."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, load_container, save_container


class Module:
    """Flat named-parameter container with checkpoint round-tripping."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def add_param(self, name: str, arr: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self._params)
        for cname, child in self._children.items():
            for pname, p in child.parameters().items():
                out[f"{cname}.{pname}"] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:5]} ...")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float32)
            if arr.shape != p.shape:
                raise ValueError(f"checkpoint shape mismatch for '{k}': {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def save(self, path) -> None:
        save_container(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_container(path))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
