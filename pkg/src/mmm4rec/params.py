"""Named parameter store with aliasing for weight sharing."""
from __future__ import annotations

import hashlib
import json
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Hierarchical ``name -> Tensor`` map.

    Shared weights live under one canonical name; other names are recorded as
    aliases and resolve to the very same tensor object.
    """

    def __init__(self) -> None:
        self.tensors: dict[str, Tensor] = {}
        self.aliases: dict[str, str] = {}
        self.meta: dict = {}

    def add(self, name: str, value) -> Tensor:
        if name in self.tensors or name in self.aliases:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self.tensors[name] = t
        return t

    def alias(self, name: str, target: str) -> None:
        if name in self.tensors or name in self.aliases:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.aliases[name] = self.resolve(target)

    def resolve(self, name: str) -> str:
        name = self.aliases.get(name, name)
        if name not in self.tensors:
            raise KeyError(f"no parameter {name!r}")
        return name

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[self.resolve(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors or name in self.aliases

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def view(self, prefix: str) -> ParamView:
        return ParamView(self, prefix)

    def num_parameters(self, prefix: str = "") -> int:
        return int(sum(t.data.size for n, t in self.tensors.items() if n.startswith(prefix)))

    def manifest(self) -> list[dict]:
        entries = [{"name": n, "alias_of": None, "shape": list(t.shape)} for n, t in self.tensors.items()]
        entries += [{"name": a, "alias_of": c, "shape": list(self.tensors[c].shape)}
                    for a, c in self.aliases.items()]
        return entries

    def manifest_hash(self) -> str:
        doc = {"meta": self.meta, "entries": sorted(self.manifest(), key=lambda e: e["name"])}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self.tensors[n].data = arr.copy()


class ParamView:
    def __init__(self, store: ParamStore, prefix: str) -> None:
        self.store = store
        self.prefix = prefix

    def _full(self, key: str) -> str:
        return f"{self.prefix}.{key}" if self.prefix else key

    def __getitem__(self, key: str) -> Tensor:
        return self.store[self._full(key)]

    def __contains__(self, key: str) -> bool:
        return self._full(key) in self.store

    def view(self, sub: str) -> ParamView:
        return ParamView(self.store, self._full(sub))
