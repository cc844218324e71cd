"""Occluded 2D LiDAR sensing and the decaying confidence map.

The sensor is a 360-degree beam fan attached to the base. Each step, every
cell a beam travels through (Bresenham, base cell to hit cell) gets confidence
exactly 1 and a fresh free/hit label; every other cell decays by alpha, so a
cell's value is exactly the product of decays since it was last seen. A local
world-axis-aligned window of the signed map (value * {+1 free, -1 hit,
0 unknown}) feeds a small frozen encoder whose latent joins the observation.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .geometry import WorldState, ray_cast_many
from .nets import AdamState, Mlp, adam_step

ALPHA = 0.9
RESOLUTION = 0.1
WINDOW_CELLS = 100

HIT_NONE = 0
HIT_OBJECT = 1
HIT_OBSTACLE = 2

OCC_UNKNOWN = 0
OCC_FREE = 1
OCC_HIT = 2

REALISTIC = "realistic"
OBJECT_FILTERED = "object_filtered"


@dataclass
class LidarScan:
    """One sweep: world-frame beam angles, ranges, and per-beam hit kind."""

    angles: np.ndarray
    ranges: np.ndarray
    hit_kind: np.ndarray  # HIT_NONE / HIT_OBJECT / HIT_OBSTACLE per beam
    max_range: float


def simulate_lidar(state: WorldState, beam_count: int = 180, max_range: float = 6.0,
                   mode: str = REALISTIC) -> LidarScan:
    """Cast the beam fan from the base against the scene.

    Args:
        state: current world.
        beam_count: number of evenly spaced beams over 360 degrees, starting
            at the base heading.
        max_range: beams report this range when nothing is hit.
        mode: REALISTIC casts against object and obstacles (the object throws
            an occlusion shadow); OBJECT_FILTERED casts against obstacles only.

    Returns:
        LidarScan with nearest-body ranges.
    """
    if mode not in (REALISTIC, OBJECT_FILTERED):
        raise ValueError("unknown lidar mode: %r" % mode)
    angles = state.base.yaw + 2.0 * math.pi * np.arange(beam_count) / beam_count
    if mode == REALISTIC:
        rects = [state.object] + list(state.obstacles)
        object_index = 0
    else:
        rects = list(state.obstacles)
        object_index = -1
    ranges, hit = ray_cast_many(state.base.position, angles, rects, max_range)
    kind = np.where(hit < 0, HIT_NONE, np.where(hit == object_index, HIT_OBJECT, HIT_OBSTACLE))
    return LidarScan(angles=angles, ranges=ranges, hit_kind=kind.astype(np.int8), max_range=max_range)


# --- beam stamping (hot loop, optional numba) --------------------------------

def _stamp_beams_py(values, occupancy, x0, y0, ex, ey, is_hit):
    """Bresenham from the base cell to each beam end cell; traversed cells get
    value 1 / label free, end cells of hitting beams get label hit."""
    nx, ny = values.shape
    for b in range(ex.shape[0]):
        x, y = x0, y0
        x1, y1 = ex[b], ey[b]
        dx = abs(x1 - x)
        dy = -abs(y1 - y)
        sx = 1 if x < x1 else -1
        sy = 1 if y < y1 else -1
        err = dx + dy
        while True:
            last = x == x1 and y == y1
            if 0 <= x < nx and 0 <= y < ny:
                values[x, y] = 1.0
                if last and is_hit[b]:
                    occupancy[x, y] = OCC_HIT
                else:
                    occupancy[x, y] = OCC_FREE
            if last:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x += sx
            if e2 <= dx:
                err += dx
                y += sy


if os.environ.get("CURAPUSH_NO_NUMBA"):
    _stamp_beams = _stamp_beams_py
else:
    try:
        import numba

        _stamp_beams = numba.njit(cache=True)(_stamp_beams_py)
    except ImportError:  # plain python fallback, identical semantics
        _stamp_beams = _stamp_beams_py


class ConfidenceMap:
    """Global decaying confidence grid with free/hit occupancy labels.

    values[ix, iy] covers the square [origin + (ix, iy)*res, origin +
    (ix+1, iy+1)*res). Confidence is 1 on cells observed this step and decays
    multiplicatively by alpha per unobserved step; labels persist until the
    cell is re-observed.
    """

    def __init__(self, origin, nx, ny, resolution=RESOLUTION, alpha=ALPHA):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        self.origin = np.asarray(origin, dtype=float).copy()
        self.resolution = float(resolution)
        self.alpha = float(alpha)
        self.values = np.zeros((int(nx), int(ny)))
        self.occupancy = np.zeros((int(nx), int(ny)), dtype=np.int8)

    @staticmethod
    def covering(lo, hi, margin=2.0, resolution=RESOLUTION, alpha=ALPHA) -> "ConfidenceMap":
        """Map covering the rectangle [lo, hi] plus a margin on every side."""
        lo = np.asarray(lo, dtype=float) - margin
        hi = np.asarray(hi, dtype=float) + margin
        n = np.ceil((hi - lo) / resolution).astype(int) + 1
        return ConfidenceMap(lo, n[0], n[1], resolution, alpha)

    def world_to_cell(self, point):
        ix = math.floor((point[0] - self.origin[0]) / self.resolution)
        iy = math.floor((point[1] - self.origin[1]) / self.resolution)
        return ix, iy

    def reset(self):
        self.values[...] = 0.0
        self.occupancy[...] = OCC_UNKNOWN

    def signed(self) -> np.ndarray:
        """Confidence times occupancy sign: +value free, -value hit, 0 unknown."""
        sign = np.zeros_like(self.values)
        sign[self.occupancy == OCC_FREE] = 1.0
        sign[self.occupancy == OCC_HIT] = -1.0
        return self.values * sign

    def update(self, scan: LidarScan, base_position) -> None:
        """Decay every cell, then stamp this scan's beams to confidence 1."""
        self.values *= self.alpha
        x0, y0 = self.world_to_cell(base_position)
        ends = np.asarray(base_position) + np.stack(
            [scan.ranges * np.cos(scan.angles), scan.ranges * np.sin(scan.angles)], axis=-1
        )
        ex = np.floor((ends[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        ey = np.floor((ends[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        is_hit = (scan.hit_kind != HIT_NONE).astype(np.uint8)
        _stamp_beams(self.values, self.occupancy, x0, y0, ex, ey, is_hit)

    def state_arrays(self):
        """Plain arrays capturing the full map state (for snapshots)."""
        return {
            "origin": self.origin.copy(),
            "meta": np.array([self.resolution, self.alpha]),
            "values": self.values.copy(),
            "occupancy": self.occupancy.astype(np.int8).copy(),
        }

    @staticmethod
    def from_state_arrays(d) -> "ConfidenceMap":
        m = ConfidenceMap(d["origin"], d["values"].shape[0], d["values"].shape[1],
                          resolution=float(d["meta"][0]), alpha=float(d["meta"][1]))
        m.values[...] = d["values"]
        m.occupancy[...] = d["occupancy"].astype(np.int8)
        return m


def update_confidence(cmap: ConfidenceMap, scan: LidarScan, base_position) -> None:
    cmap.update(scan, base_position)


def local_window(cmap: ConfidenceMap, base_position, size: int = WINDOW_CELLS) -> np.ndarray:
    """World-axis-aligned signed crop of the map, centered on the base cell.

    The base cell lands at window index size//2 along both axes. Cells outside
    the map fill with 0. Never raises for out-of-map bases.
    """
    bx, by = cmap.world_to_cell(base_position)
    half = size // 2
    out = np.zeros((size, size))
    x_lo, y_lo = bx - half, by - half
    sx0 = max(0, -x_lo)
    sy0 = max(0, -y_lo)
    mx0 = max(0, x_lo)
    my0 = max(0, y_lo)
    nx, ny = cmap.values.shape
    w = min(size - sx0, nx - mx0)
    h = min(size - sy0, ny - my0)
    if w > 0 and h > 0:
        out[sx0:sx0 + w, sy0:sy0 + h] = cmap.signed()[mx0:mx0 + w, my0:my0 + h]
    return out


# --- PGM dump ----------------------------------------------------------------

def write_pgm(path, values) -> None:
    """Binary PGM (P5), confidence value * 255 rounded. Rows run from the top
    (max y) down so the file views like an image."""
    v = np.asarray(values, dtype=float)
    img = np.rint(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)
    img = img.T[::-1]  # (ny, nx) with the first row at max y
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 file written by write_pgm back to values[ix, iy] in [0, 1]."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValueError("not a binary PGM")
        w, h = (int(t) for t in f.readline().split())
        maxval = int(f.readline())
        img = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    return img[::-1].T.astype(float) / maxval


# --- encoders ----------------------------------------------------------------

LATENT_DIM_VAE = 32
LATENT_DIM_POOL = WINDOW_CELLS  # 10x10 block means


class PoolEncoder:
    """Fallback latent: 10x10 average-pool of the window, flattened (dim 100).

    No parameters, no training, fully deterministic.
    """

    kind = "pool"
    latent_dim = LATENT_DIM_POOL

    def encode(self, window: np.ndarray) -> np.ndarray:
        w = np.asarray(window, dtype=float).reshape(WINDOW_CELLS, WINDOW_CELLS)
        block = WINDOW_CELLS // 10
        return w.reshape(10, block, 10, block).mean(axis=(1, 3)).reshape(-1)


def pool_windows(windows: np.ndarray) -> np.ndarray:
    """4x max-magnitude pooling: 100x100 signed windows -> flat 625 vectors.

    Plain max would erase hit cells (-1) whenever a free cell shares the
    block, so each 4x4 block keeps its largest-|value| entry, sign included.
    """
    w = np.asarray(windows, dtype=float).reshape(-1, 25, 4, 25, 4)
    flat = w.transpose(0, 1, 3, 2, 4).reshape(-1, 25, 25, 16)
    idx = np.abs(flat).argmax(axis=-1)
    pooled = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return pooled.reshape(-1, 625)


class VaeEncoder:
    """Frozen variational encoder over pooled windows; encode returns the mean.

    Pretrained once on random-trajectory windows, then used as a fixed feature
    map: encode(window) = mean head of the encoder MLP on the 4x-pooled input.
    """

    kind = "vae"
    latent_dim = LATENT_DIM_VAE

    def __init__(self, enc: Mlp, dec: Mlp):
        self.enc = enc
        self.dec = dec

    def encode(self, window: np.ndarray) -> np.ndarray:
        x = pool_windows(np.asarray(window).reshape(1, WINDOW_CELLS, WINDOW_CELLS))[0]
        h = self.enc.forward(x)
        return h[: self.latent_dim].copy()

    def reconstruct(self, window: np.ndarray) -> np.ndarray:
        """Decoder output from the mean latent (625 pooled cells)."""
        x = pool_windows(np.asarray(window).reshape(1, WINDOW_CELLS, WINDOW_CELLS))[0]
        return self.dec.forward(self.enc.forward(x)[: self.latent_dim])


_LOGVAR_CLAMP = 6.0


def pretrain_encoder(windows, epochs: int = 20, seed: int = 0, batch_size: int = 128,
                     lr: float = 1e-3, kl_weight: float = 1e-3):
    """Train the window VAE; returns (encoder, per_epoch_losses).

    Args:
        windows: (M, 100, 100) signed confidence windows from random
            trajectories; M must be positive.
        epochs: passes over the pooled dataset.
        seed: init + shuffling + reparameterization seed.
        batch_size, lr, kl_weight: optimizer knobs; reconstruction is mean
            squared error per pooled cell, KL is summed over latent dims.

    The loss is reconstruction + kl_weight * KL(q(z|x) || N(0, I)), optimized
    with Adam through hand-written gradients (reparameterization trick).
    """
    windows = np.asarray(windows, dtype=float)
    if windows.size == 0:
        raise ValueError("pretrain_encoder needs a non-empty window set")
    data = pool_windows(windows)
    m = data.shape[0]

    rng = np.random.default_rng(seed)
    enc = Mlp([625, 128, 2 * LATENT_DIM_VAE], seed=seed)
    dec = Mlp([LATENT_DIM_VAE, 128, 625], seed=seed + 1)
    opt_enc = AdamState(enc.params, lr=lr)
    opt_dec = AdamState(dec.params, lr=lr)

    d = LATENT_DIM_VAE
    losses = []
    for _ in range(int(epochs)):
        order = rng.permutation(m)
        epoch_loss = 0.0
        for s in range(0, m, batch_size):
            x = data[order[s:s + batch_size]]
            bsz = x.shape[0]
            h, enc_cache = enc.forward_cache(x)
            mu = h[:, :d]
            logvar = np.clip(h[:, d:], -_LOGVAR_CLAMP, _LOGVAR_CLAMP)
            std = np.exp(0.5 * logvar)
            eps = rng.standard_normal(mu.shape)
            z = mu + std * eps
            xh, dec_cache = dec.forward_cache(z)

            recon = float(np.mean((xh - x) ** 2))
            kl = float(0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar) / bsz)
            epoch_loss += (recon + kl_weight * kl) * bsz

            dxh = 2.0 * (xh - x) / (bsz * x.shape[1])
            dec_grads, dz = dec.backward(dec_cache, dxh)
            clamp_active = (np.abs(h[:, d:]) < _LOGVAR_CLAMP).astype(float)
            dmu = dz + kl_weight * mu / bsz
            dlogvar = (dz * eps * 0.5 * std + kl_weight * 0.5 * (np.exp(logvar) - 1.0) / bsz) * clamp_active
            dh = np.concatenate([dmu, dlogvar], axis=1)
            enc_grads, _ = enc.backward(enc_cache, dh)

            adam_step(enc.params, enc_grads, opt_enc)
            adam_step(dec.params, dec_grads, opt_dec)
        losses.append(epoch_loss / m)

    return VaeEncoder(enc, dec), np.array(losses)


def encoder_to_entries(encoder):
    if encoder.kind == "pool":
        return {"encoder_kind": np.array([0.0])}
    entries = {"encoder_kind": np.array([1.0])}
    entries.update(encoder.enc.to_entries("enc."))
    entries.update(encoder.dec.to_entries("dec."))
    return entries


def encoder_from_entries(entries):
    if int(entries["encoder_kind"][0]) == 0:
        return PoolEncoder()
    return VaeEncoder(Mlp.from_entries(entries, "enc."), Mlp.from_entries(entries, "dec."))
