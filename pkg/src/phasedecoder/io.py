"""File formats: PFM float images, coefficient/loss CSVs and the dataset directory layout.

PFM files are single channel (``Pf``), little-endian (scale ``-1.0``) and
stored bottom row first, as the format prescribes. Arrays handed to and
returned from this module are top row first.
"""
from __future__ import annotations

import csv
import json
import os
import re
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .field import FocusStack, Grid2D, RealImage
from .sim import NoiseSpec
from .zernike import PupilGeometry


def write_pfm(path, image: np.ndarray):
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("only single-channel PFM images are supported")
    height, width = image.shape
    data = np.ascontiguousarray(np.flipud(image), dtype="<f4")
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag != b"Pf":
            raise ValueError(f"{path}: not a single-channel PFM file (tag {tag!r})")
        dims = f.readline()
        while dims.startswith(b"#"):
            dims = f.readline()
        match = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not match:
            raise ValueError(f"{path}: malformed PFM header")
        width, height = int(match.group(1)), int(match.group(2))
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != width * height:
        raise ValueError(f"{path}: expected {width * height} floats, found {data.size}")
    return np.flipud(data.reshape(height, width)).astype(np.float64)


def write_coefficients(path, coeffs: np.ndarray):
    coeffs = np.atleast_2d(coeffs)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["measurement_index"] + [f"c{m + 1}" for m in range(coeffs.shape[1])])
        for n, row in enumerate(coeffs):
            w.writerow([n] + [repr(float(c)) for c in row])


def read_coefficients(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    body = [r for r in rows[1:] if r]
    body.sort(key=lambda r: int(r[0]))
    return np.array([[float(c) for c in r[1:]] for r in body])


def write_loss_csv(path, iterations: Sequence[int], reports):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        n = len(reports[0].per_measurement) if reports else 0
        w.writerow(["iteration", "loss"] + [f"loss_{i:03d}" for i in range(n)])
        for it, rep in zip(iterations, reports):
            w.writerow([it, repr(rep.total)] + [repr(float(v)) for v in rep.per_measurement])


def read_loss_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    return (np.array([int(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


# ------------------------------------------------------------ dataset layout

STACK_META = "stack.json"
TRUTH_PHASE = "truth_phase.pfm"
TRUTH_ZERNIKE = "truth_zernike.csv"


def amp_name(n: int) -> str:
    return f"amp_{n:03d}.pfm"


def save_dataset(out_dir, stack: FocusStack, geometry: PupilGeometry,
                 defocus_um: Optional[Sequence[float]], noise: NoiseSpec,
                 truth_phase: Optional[RealImage] = None,
                 truth_zernike: Optional[np.ndarray] = None):
    os.makedirs(out_dir, exist_ok=True)
    grid = stack.grid
    meta = {
        "grid": {"width": grid.width, "height": grid.height,
                 "pixel_size": grid.pixel_size, "wavelength": grid.wavelength},
        "geometry": {"na": geometry.na},
        "defocus_um": None if defocus_um is None else [float(z) for z in defocus_um],
        "noise": {"model": noise.model, "parameter": noise.parameter,
                  "rng_seed": noise.rng_seed},
        "labels": list(stack.labels),
        "count": len(stack),
    }
    with open(os.path.join(out_dir, STACK_META), "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    for n, amp in enumerate(stack.amplitudes):
        write_pfm(os.path.join(out_dir, amp_name(n)), amp.values)
    if truth_phase is not None:
        write_pfm(os.path.join(out_dir, TRUTH_PHASE), truth_phase.values)
    if truth_zernike is not None:
        write_coefficients(os.path.join(out_dir, TRUTH_ZERNIKE), truth_zernike)


class Dataset:
    """A dataset directory loaded into memory."""

    def __init__(self, stack: FocusStack, geometry: PupilGeometry,
                 defocus_um: Optional[List[float]], noise: NoiseSpec,
                 truth_phase: Optional[RealImage], truth_zernike: Optional[np.ndarray]):
        self.stack = stack
        self.geometry = geometry
        self.defocus_um = defocus_um
        self.noise = noise
        self.truth_phase = truth_phase
        self.truth_zernike = truth_zernike


def load_dataset(path) -> Dataset:
    with open(os.path.join(path, STACK_META)) as f:
        meta = json.load(f)
    grid = Grid2D(**meta["grid"])
    geometry = PupilGeometry(grid, meta["geometry"]["na"])
    amps = [read_pfm(os.path.join(path, amp_name(n))) for n in range(meta["count"])]
    stack = FocusStack.from_array(grid, np.array(amps), meta.get("labels") or ())
    truth = None
    tp = os.path.join(path, TRUTH_PHASE)
    if os.path.exists(tp):
        truth = RealImage(grid, read_pfm(tp))
    tz = os.path.join(path, TRUTH_ZERNIKE)
    zern = read_coefficients(tz) if os.path.exists(tz) else None
    return Dataset(stack, geometry, meta.get("defocus_um"), NoiseSpec(**meta["noise"]),
                   truth, zern)
