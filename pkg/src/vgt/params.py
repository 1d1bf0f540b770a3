"""Named parameter store, AdamW with linear warmup, and checkpoint I/O.

Checkpoint layout (single file): an ASCII header followed by raw values.

    VGTCKPT 1
    <n>
    <name> <dtype> <d0,d1,...>     (n lines, names sorted)
    <raw little-endian values, concatenated in header order>

Names are dotted paths (e.g. ``git.block0.attn.wq``); iteration is always
in sorted-name order so serialization and optimizer traversal are
deterministic.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from vgt.tensor import Tensor

_MAGIC = "VGTCKPT 1"


@dataclass
class AdamWConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0


class ParamStore:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return sum(p.size for p in self._params.values())

    # -- optimizer -------------------------------------------------------------

    def adamw_step(self, cfg: AdamWConfig) -> None:
        """Decoupled-weight-decay Adam update over all parameters."""
        missing = [n for n, p in self.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"adamw_step: missing grads for {missing[:5]}"
                               f"{'...' if len(missing) > 5 else ''}")
        self.step_count += 1
        t = self.step_count
        warm = min(1.0, t / cfg.warmup_steps) if cfg.warmup_steps > 0 else 1.0
        lr_t = cfg.lr * warm
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, p in self.items():
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
            v = self._v.get(name)
            if v is None:
                v = self._v[name] = np.zeros_like(p.data)
            m += (1.0 - cfg.beta1) * (g - m)
            v += (1.0 - cfg.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.data -= lr_t * (update + cfg.weight_decay * p.data)

    # -- serialization -----------------------------------------------------------

    def save(self, path: str) -> None:
        lines = [_MAGIC, str(len(self._params))]
        blobs = []
        for name, p in self.items():
            arr = p.data
            dt = "f8" if arr.dtype == np.float64 else "f4"
            lines.append(f"{name} {dt} {','.join(str(d) for d in arr.shape)}")
            blobs.append(np.ascontiguousarray(arr).astype("<" + dt).tobytes())
        with open(path, "wb") as f:
            f.write(("\n".join(lines) + "\n").encode("ascii"))
            for blob in blobs:
                f.write(blob)

    @staticmethod
    def load_arrays(path: str) -> dict[str, np.ndarray]:
        with open(path, "rb") as f:
            raw = f.read()
        head_end = 0
        magic_end = raw.index(b"\n")
        if raw[:magic_end].decode("ascii") != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        pos = magic_end + 1
        nl = raw.index(b"\n", pos)
        n = int(raw[pos:nl])
        pos = nl + 1
        specs = []
        for _ in range(n):
            nl = raw.index(b"\n", pos)
            name, dt, shape_s = raw[pos:nl].decode("ascii").split(" ")
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            specs.append((name, dt, shape))
            pos = nl + 1
        out = {}
        for name, dt, shape in specs:
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * (8 if dt == "f8" else 4)
            arr = np.frombuffer(raw[pos:pos + nbytes], dtype="<" + dt).reshape(shape)
            out[name] = arr.astype(np.float64 if dt == "f8" else np.float32)
            pos += nbytes
        if pos != len(raw):
            raise ValueError(f"{path}: trailing bytes in checkpoint")
        return out

    def load(self, path: str, prefix_filter: str | None = None,
             strict: bool = True) -> tuple[list[str], list[str]]:
        """Copy checkpoint arrays into matching parameters.

        Returns (loaded names, checkpoint names with no matching parameter).
        With strict=True every parameter matching prefix_filter must be
        present in the checkpoint.
        """
        arrays = self.load_arrays(path)
        loaded, extra = [], []
        for name, arr in arrays.items():
            if prefix_filter is not None and not name.startswith(prefix_filter):
                continue
            if name not in self._params:
                extra.append(name)
                continue
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype)
            loaded.append(name)
        if strict:
            want = [n for n in self.names()
                    if prefix_filter is None or n.startswith(prefix_filter)]
            missing = sorted(set(want) - set(loaded))
            if missing:
                raise ValueError(f"checkpoint {os.path.basename(path)} missing "
                                 f"parameters: {missing[:5]}")
        return loaded, extra
