"""Generates the bundled equirectangular environments as Radiance HDR files.

train.hdr   one dominant sun plus a weak sky/ground ambient term
studio.hdr  soft-box studio lighting on a neutral gradient

Layout matches the crate: row 0 is +Y, column 0 faces -Z, longitude grows
toward +X.
"""
import sys
from pathlib import Path

import numpy as np

H, W = 128, 256


def directions():
    v = (np.arange(H) + 0.5) / H
    u = (np.arange(W) + 0.5) / W
    theta = v[:, None] * np.pi
    phi = u[None, :] * 2 * np.pi
    x = np.sin(theta) * np.sin(phi)
    y = np.cos(theta) * np.ones_like(phi)
    z = -np.sin(theta) * np.cos(phi)
    return np.stack([x, y, z], -1)


def unit(az_deg, el_deg):
    az, el = np.radians(az_deg), np.radians(el_deg)
    # azimuth measured from -Z toward +X
    return np.array([np.cos(el) * np.sin(az), np.sin(el), -np.cos(el) * np.cos(az)])


def lobe(d, center, width_deg, peak):
    cosang = np.clip(d @ center, -1, 1)
    ang = np.degrees(np.arccos(cosang))
    return peak * np.exp(-((ang / width_deg) ** 2))


def train_env():
    d = directions()
    y = d[..., 1:2]
    sky = 0.25 * np.array([0.85, 0.92, 1.0]) * (0.6 + 0.4 * np.clip(y, 0, 1))
    ground = 0.1 * np.array([0.55, 0.5, 0.45])
    amb = np.where(y >= 0, sky, ground)
    sun = lobe(d, unit(45, 40), 4.0, 40.0)[..., None] * np.array([1.0, 0.95, 0.88])
    return amb + sun


def box(d, center, half_w_deg, half_h_deg, peak):
    # soft rectangle in the local tangent plane of `center`
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(center, up)
    right /= np.linalg.norm(right)
    upl = np.cross(right, center)
    fwd = d @ center
    a = np.degrees(np.arctan2(d @ right, fwd))
    b = np.degrees(np.arctan2(d @ upl, fwd))
    s = 3.0
    fa = 1 / (1 + np.exp((np.abs(a) - half_w_deg) / s * 4))
    fb = 1 / (1 + np.exp((np.abs(b) - half_h_deg) / s * 4))
    return peak * fa * fb * (fwd > 0)


def studio_env():
    d = directions()
    y = d[..., 1:2]
    base = (0.3 + 0.15 * y) * np.array([1.0, 1.0, 1.0])
    key = box(d, unit(40, 30), 18, 12, 4.0)[..., None] * np.array([1.0, 0.98, 0.95])
    fill = box(d, unit(-70, 15), 22, 16, 1.5)[..., None] * np.array([0.92, 0.96, 1.0])
    rim = box(d, unit(180, 45), 12, 10, 2.5)[..., None]
    return base + key + fill + rim


def write_hdr(path, img):
    img = np.maximum(img.astype(np.float64), 0)
    m = img.max(-1)
    out = np.zeros(img.shape[:2] + (4,), np.uint8)
    nz = m > 1e-32
    mant, exp = np.frexp(m[nz])
    scale = mant * 256.0 / m[nz]
    out[nz, :3] = np.clip(np.floor(img[nz] * scale[:, None]), 0, 255).astype(np.uint8)
    out[nz, 3] = (exp + 128).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {img.shape[0]} +X {img.shape[1]}\n".encode())
        f.write(out.tobytes())


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent.parent / "assets")
    write_hdr(out / "train.hdr", train_env())
    write_hdr(out / "studio.hdr", studio_env())
