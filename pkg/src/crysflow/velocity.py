"""Message-passing velocity field over (fractional coords, lattice, time).

Nodes carry atom-type embeddings; every ordered pair of atoms (self pairs
included) exchanges a message built from both node states, the standardized
lattice, a sinusoidal embedding of the fractional displacement ``f_j - f_i``
and a time embedding. Coordinate velocities come from a per-node head,
lattice velocities from a head on the mean-pooled node states.

Edges only see coordinate differences through periodic functions, so the
field is invariant to global torus translations; sum aggregation makes it
permutation equivariant. Orientation never enters, so rotation invariance is
automatic.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .crystal import Crystal
from .elements import N_ELEMENTS, atomic_number
from .manifold import TangentVector, to_flow_coords

CHECKPOINT_VERSION = 1
DTYPE = torch.float64


@dataclass(frozen=True)
class NetConfig:
    hidden: int = 64
    time_dim: int = 32
    layers: int = 3
    n_freq: int = 10
    layer_norm: bool = True


PRESETS = {
    "desk": NetConfig(),
    "paper": NetConfig(hidden=512, time_dim=256, layers=6, n_freq=10),
}


def sinusoidal_embedding(x, n_freq: int):
    """(sin(2 pi k x), cos(2 pi k x)) for k = 0..n_freq, sines first.

    Works on numpy arrays and torch tensors; a trailing axis of length
    2 * (n_freq + 1) is appended.
    """
    if isinstance(x, torch.Tensor):
        k = torch.arange(n_freq + 1, dtype=x.dtype, device=x.device)
        arg = 2 * math.pi * x.unsqueeze(-1) * k
        return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)
    x = np.asarray(x, float)
    arg = 2 * np.pi * x[..., None] * np.arange(n_freq + 1)
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half, 1))
    arg = 1000.0 * t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


def _mlp(d_in: int, d_hidden: int, d_out: int, final_act: bool) -> nn.Sequential:
    layers = [nn.Linear(d_in, d_hidden), nn.SiLU(), nn.Linear(d_hidden, d_out)]
    if final_act:
        layers.append(nn.SiLU())
    return nn.Sequential(*layers)


class VelocityNet(nn.Module):
    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        h, t = config.hidden, config.time_dim
        edge_dim = 3 * 2 * (config.n_freq + 1)
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            self.embed = nn.Embedding(N_ELEMENTS + 1, h)
            self.message = nn.ModuleList(
                [_mlp(2 * h + 6 + edge_dim + t, h, h, final_act=True) for _ in range(config.layers)]
            )
            self.update = nn.ModuleList([_mlp(2 * h, h, h, final_act=False) for _ in range(config.layers)])
            self.norms = nn.ModuleList(
                [nn.LayerNorm(h) if config.layer_norm else nn.Identity() for _ in range(config.layers)]
            )
            self.coord_head = _mlp(h, h, 3, final_act=False)
            self.lattice_head = _mlp(h, h, 6, final_act=False)
        finally:
            torch.random.set_rng_state(gen_state)
        for head in (self.coord_head, self.lattice_head):
            nn.init.zeros_(head[-1].weight)
            nn.init.zeros_(head[-1].bias)
        self.register_buffer("lattice_mean", torch.zeros(6))
        self.register_buffer("lattice_std", torch.ones(6))
        self.register_buffer("coord_out_std", torch.ones(3))
        self.register_buffer("lattice_out_mean", torch.zeros(6))
        self.register_buffer("lattice_out_std", torch.ones(6))
        self.to(DTYPE)

    def forward(self, frac, lattice, z, t, project: bool = True):
        """frac (B, n, 3), lattice (B, 6) as (lengths, unconstrained angles),
        z (B, n) atomic numbers, t (B,). Returns coordinate (B, n, 3) and
        lattice (B, 6) velocities in natural units."""
        if frac.dim() != 3 or frac.shape[-1] != 3:
            raise ValueError(f"frac must be (B, n, 3), got {tuple(frac.shape)}")
        B, n, _ = frac.shape
        if lattice.shape != (B, 6) or z.shape != (B, n) or t.shape != (B,):
            raise ValueError("inconsistent batch shapes")
        cfg = self.config
        h = self.embed(z)
        lat = (lattice - self.lattice_mean) / self.lattice_std
        disp = frac[:, None, :, :] - frac[:, :, None, :]  # [b, i, j] = f_j - f_i
        edge = sinusoidal_embedding(disp, cfg.n_freq).reshape(B, n, n, -1)
        temb = time_embedding(t, cfg.time_dim)
        ctx = torch.cat([lat, temb], dim=-1)[:, None, None, :].expand(B, n, n, -1)
        for msg, upd, norm in zip(self.message, self.update, self.norms):
            hi = h[:, :, None, :].expand(B, n, n, -1)
            hj = h[:, None, :, :].expand(B, n, n, -1)
            m = msg(torch.cat([hi, hj, edge, ctx], dim=-1)).sum(dim=2)
            h = norm(h + upd(torch.cat([h, m], dim=-1)))
        coord = self.coord_head(h) * self.coord_out_std
        if project:
            coord = coord - coord.mean(dim=1, keepdim=True)
        lat_v = self.lattice_head(h.mean(dim=1)) * self.lattice_out_std + self.lattice_out_mean
        return coord, lat_v

    # ------------------------------------------------------------ numpy glue

    def field(self) -> Callable:
        """Numpy callable (frac, lattice, z, t) -> (coord_v, lattice_v)."""

        def f(frac, lattice, z, t):
            with torch.no_grad():
                B = frac.shape[0]
                tt = torch.full((B,), float(t), dtype=DTYPE) if np.ndim(t) == 0 else torch.as_tensor(t, dtype=DTYPE)
                cv, lv = self(
                    torch.as_tensor(frac, dtype=DTYPE),
                    torch.as_tensor(lattice, dtype=DTYPE),
                    torch.as_tensor(z, dtype=torch.long),
                    tt,
                )
            return cv.numpy(), lv.numpy()

        return f

    def set_standardization(self, lattice_mean, lattice_std, coord_out_std, lattice_out_mean, lattice_out_std):
        for name, val in [
            ("lattice_mean", lattice_mean),
            ("lattice_std", lattice_std),
            ("coord_out_std", coord_out_std),
            ("lattice_out_mean", lattice_out_mean),
            ("lattice_out_std", lattice_out_std),
        ]:
            val = torch.as_tensor(np.asarray(val, float), dtype=DTYPE)
            if name.endswith("std") and not torch.all(val > 0):
                raise ValueError(f"{name} must be strictly positive")
            getattr(self, name).copy_(val)


def crystal_arrays(crystals: list[Crystal]):
    """Stack same-size crystals into (frac, lattice, z) numpy arrays."""
    n = crystals[0].n_atoms
    if any(c.n_atoms != n for c in crystals):
        raise ValueError("crystals in a batch must have equal atom counts")
    frac = np.stack([c.frac_coords for c in crystals])
    lat = np.stack([np.concatenate(to_flow_coords(c)[1:]) for c in crystals])
    z = np.array([[atomic_number(s) for s in c.species] for c in crystals], dtype=np.int64)
    return frac, lat, z


def forward(net: VelocityNet, crystal: Crystal, t: float) -> TangentVector:
    frac, lat, z = crystal_arrays([crystal])
    cv, lv = net.field()(frac, lat, z, t)
    return TangentVector(cv[0], lv[0, :3], lv[0, 3:])


def gradient(net: VelocityNet, batch, loss_fn) -> dict[str, np.ndarray]:
    """Gradient of ``loss_fn(net, batch)`` with respect to every trainable
    parameter."""
    net.zero_grad(set_to_none=True)
    loss = loss_fn(net, batch)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    loss.backward()
    return {
        name: (p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
        for name, p in net.named_parameters()
    }


# ------------------------------------------------------------ checkpoints


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def save_checkpoint(net: VelocityNet, path, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(net.config), "extra": extra or {}}
    arrays = {name: t.detach().numpy() for name, t in net.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[VelocityNet, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        net = VelocityNet(NetConfig(**meta["config"]))
        state = {k: torch.from_numpy(np.array(data[k])) for k in data.files if k != "__meta__"}
    net.load_state_dict(state)
    return net, meta.get("extra", {})
