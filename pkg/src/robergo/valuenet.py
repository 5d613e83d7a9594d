"""Sine-activation value-function approximator and its checkpoint format.

The net maps the full game state ``(x1, x2, z_k for k != 0, t)`` to the
scalar worst-case cost-to-go.  The k = 0 coverage mode is excluded from the
input: its deficit rate is identically zero for a normalized density, so
``z_0`` carries no information.  Inputs are affinely normalized to
``[-1, 1]`` inside the forward pass (the ranges live in the metadata), so
input gradients come out in raw units.

Everything runs in float64: the controller consumes input gradients, and
the contract for those is exactness against central differences at 1e-4
relative — float32 noise would eat most of that budget.

Checkpoint layout (little-endian):

    8 bytes   magic ``RGVNET01``
    8 bytes   uint64 metadata length
    ...       canonical JSON metadata (sorted keys, compact separators)
    8 bytes   uint64 parameter count
    ...       float64 parameter array, concatenated in module order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from numpy.typing import NDArray

MAGIC = b"RGVNET01"
FORMAT_VERSION = 1

# Metadata keys that must agree between a checkpoint and the problem it is
# used for.  Architecture keys are checked implicitly by parameter count.
FINGERPRINT_KEYS = (
    "modes_per_axis",
    "space_lengths",
    "u_max",
    "d_max",
    "q",
    "R",
    "barrier_weight",
    "barrier_margin",
    "t0",
    "tf",
)


class SineLayer(torch.nn.Module):
    def __init__(self, in_features: int, out_features: int, omega: float,
                 is_first: bool, generator: torch.Generator):
        super().__init__()
        self.omega = omega
        self.linear = torch.nn.Linear(in_features, out_features, dtype=torch.float64)
        with torch.no_grad():
            if is_first:
                bound = 1.0 / in_features
            else:
                bound = np.sqrt(6.0 / in_features) / omega
            self.linear.weight.uniform_(-bound, bound, generator=generator)
            self.linear.bias.uniform_(-bound, bound, generator=generator)

    def forward(self, x):
        return torch.sin(self.omega * self.linear(x))


class _Core(torch.nn.Module):
    def __init__(self, input_dim: int, hidden: list[int], omega: float, seed: int):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        layers = []
        prev = input_dim
        for i, width in enumerate(hidden):
            layers.append(SineLayer(prev, width, omega, is_first=(i == 0), generator=g))
            prev = width
        self.hidden_layers = torch.nn.ModuleList(layers)
        self.final = torch.nn.Linear(prev, 1, dtype=torch.float64)
        with torch.no_grad():
            bound = np.sqrt(6.0 / prev) / omega
            self.final.weight.uniform_(-bound, bound, generator=g)
            self.final.bias.uniform_(-bound, bound, generator=g)
        # Fixed affine input normalization to [-1, 1]; identity until set.
        self.register_buffer("in_lo", torch.zeros(input_dim, dtype=torch.float64))
        self.register_buffer("in_hi", torch.ones(input_dim, dtype=torch.float64))

    def set_input_range(self, lo, hi):
        self.in_lo.copy_(torch.as_tensor(lo, dtype=torch.float64))
        self.in_hi.copy_(torch.as_tensor(hi, dtype=torch.float64))

    def forward(self, inp):
        x = 2.0 * (inp - self.in_lo) / (self.in_hi - self.in_lo) - 1.0
        for layer in self.hidden_layers:
            x = layer(x)
        return self.final(x)


class ValueNet:
    """Trained value approximator plus the problem fingerprint it is for."""

    def __init__(self, core: _Core, meta: dict):
        self.core = core
        self.meta = meta
        n = meta["modes_per_axis"] ** len(meta["space_lengths"])
        mask = np.zeros(n, dtype=bool)
        mask[meta["modes_in_use"]] = True
        self.mode_mask = mask

    @property
    def input_dim(self) -> int:
        return self.meta["input_dim"]

    def _pack(self, x: NDArray, z: NDArray, t: NDArray) -> torch.Tensor:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.atleast_2d(np.asarray(z, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        inp = np.concatenate([x, z, t[:, None]], axis=1)
        if inp.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input dim {self.input_dim}, got {inp.shape[1]}"
            )
        return torch.from_numpy(inp)

    def eval_np(self, x: NDArray, z: NDArray, t: NDArray) -> NDArray:
        with torch.no_grad():
            return self.core(self._pack(x, z, t)).numpy()[:, 0]

    def grads_np(self, x: NDArray, z: NDArray, t: NDArray):
        """Exact input gradients: ``(V, dV/dx (B,2), dV/dz (B,Kin), dV/dt)``."""
        inp = self._pack(x, z, t).requires_grad_(True)
        V = self.core(inp)
        (g,) = torch.autograd.grad(V.sum(), inp)
        V = V.detach().numpy()[:, 0]
        g = g.numpy()
        kin = self.input_dim - 3
        return V, g[:, 0:2], g[:, 2 : 2 + kin], g[:, -1]

    def param_vector(self) -> NDArray:
        with torch.no_grad():
            return np.concatenate(
                [p.numpy().ravel() for p in self.core.parameters()]
            )

    def load_param_vector(self, vec: NDArray):
        vec = np.asarray(vec, dtype=np.float64)
        idx = 0
        with torch.no_grad():
            for p in self.core.parameters():
                n = p.numel()
                p.copy_(torch.from_numpy(vec[idx : idx + n].reshape(p.shape)))
                idx += n
        if idx != len(vec):
            raise ValueError(f"parameter vector length {len(vec)} != {idx}")


def make_net(meta: dict) -> ValueNet:
    """Fresh net from a metadata dict (see ``build_metadata``)."""
    core = _Core(
        meta["input_dim"], list(meta["hidden_layers"]), meta["omega"], meta["init_seed"]
    )
    core.set_input_range(meta["input_lo"], meta["input_hi"])
    return ValueNet(core, meta)


def build_metadata(
    *,
    modes_per_axis: int,
    space_lengths: tuple[float, ...],
    modes_in_use: list[int],
    u_max: float,
    d_max: float,
    q: float,
    R: float,
    barrier_weight: float,
    barrier_margin: float,
    t0: float,
    tf: float,
    hidden_layers: list[int],
    omega: float,
    init_seed: int,
    input_lo: list[float],
    input_hi: list[float],
    distribution: dict,
    extra: dict | None = None,
) -> dict:
    meta = {
        "format_version": FORMAT_VERSION,
        "modes_per_axis": modes_per_axis,
        "space_lengths": list(space_lengths),
        "modes_in_use": list(modes_in_use),
        "input_dim": 2 + len(modes_in_use) + 1,
        "u_max": u_max,
        "d_max": d_max,
        "q": q,
        "R": R,
        "barrier_weight": barrier_weight,
        "barrier_margin": barrier_margin,
        "t0": t0,
        "tf": tf,
        "hidden_layers": list(hidden_layers),
        "omega": omega,
        "init_seed": init_seed,
        "input_lo": list(input_lo),
        "input_hi": list(input_hi),
        "distribution": distribution,
    }
    if extra:
        meta.update(extra)
    return meta


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def save_checkpoint(net: ValueNet, path: str | Path):
    meta_bytes = canonical_json(net.meta).encode()
    params = net.param_vector().astype("<f8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<Q", len(params)))
        f.write(params.tobytes())


def load_checkpoint(path: str | Path) -> ValueNet:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a value-net checkpoint (bad magic)")
        (meta_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(meta_len).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported format version {meta.get('format_version')}"
            )
        (count,) = struct.unpack("<Q", f.read(8))
        raw = f.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError(f"{path}: truncated parameter block")
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    net = make_net(meta)
    expected = len(net.param_vector())
    if count != expected:
        raise ValueError(
            f"{path}: parameter count {count} does not match architecture "
            f"({expected})"
        )
    net.load_param_vector(params)
    return net


def verify_fingerprint(net: ValueNet, expected: dict):
    """Raise unless the checkpoint was trained for this problem setup."""
    for key in FINGERPRINT_KEYS:
        if key not in expected:
            continue
        have, want = net.meta.get(key), expected[key]
        if isinstance(want, (list, tuple)):
            match = list(have) == list(want)
        else:
            match = have == want
        if not match:
            raise ValueError(
                f"checkpoint fingerprint mismatch on {key!r}: "
                f"checkpoint has {have!r}, problem wants {want!r}"
            )
