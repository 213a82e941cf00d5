"""Deterministic synthetic brain phantoms.

Each phantom is a deformed variant of one fixed template: concentric
ellipsoidal shells (CSF rim, GM ribbon, WM core) plus two posterior blobs
for brain stem and cerebellum. The seed drives a smooth low-frequency
displacement field and the intensity noise, so different seeds yield
genuinely similar subjects for the retrieval database. Brain stem shares
the WM intensity row and cerebellum sits next to GM, so intensity alone
cannot separate those pairs; a spatial prior can.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import NUM_CLASSES, Volume

# class order: background, csf, gm, wm, brainstem, cerebellum
# brain stem shares the WM row and cerebellum the GM row: those structures
# are separable only by position, which is exactly what a label prior adds
DEFAULT_INTENSITIES = {
    "T1": (0.0, 60.0, 100.0, 130.0, 130.0, 100.0),
    "T1IR": (0.0, 150.0, 80.0, 105.0, 105.0, 80.0),
    "T2FLAIR": (0.0, 45.0, 115.0, 93.0, 93.0, 115.0),
}


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, intensity table and randomness knobs for one subject.

    Centers and semi-axes are fractions of the volume shape; shell radii are
    normalized ellipsoidal radii (WM core, GM outer, CSF outer). The brain
    z semi-axis deliberately exceeds the stack so every slice contains
    tissue, which keeps per-slice normalization stable.
    """

    seed: int = 0
    shape: tuple = (24, 96, 96)
    spacing_mm: tuple = (3.0, 1.0, 1.0)
    brain_center: tuple = (0.48, 0.50, 0.50)
    brain_axes: tuple = (0.62, 0.40, 0.36)
    shell_radii: tuple = (0.64, 0.90, 1.00)
    stem_center: tuple = (0.42, 0.58, 0.50)
    stem_axes: tuple = (0.14, 0.085, 0.07)
    cereb_center: tuple = (0.33, 0.77, 0.50)
    cereb_axes: tuple = (0.16, 0.10, 0.13)
    intensities: dict = field(default_factory=lambda: dict(DEFAULT_INTENSITIES))
    noise_std: float = 14.0
    deformation_px: float = 2.5

    def __post_init__(self):
        if len(self.shape) != 3:
            raise ValueError("shape must be 3D")
        if self.shape[1] < 64 or self.shape[2] < 64:
            raise ValueError("in-plane shape must be at least 64x64, got %s" % (self.shape,))
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.deformation_px < 0:
            raise ValueError("deformation_px must be >= 0")
        r = self.shell_radii
        if not (0 < r[0] < r[1] < r[2] <= 1.0):
            raise ValueError("infeasible shell geometry: radii %s must increase to <= 1" % (r,))
        for axes in (self.brain_axes, self.stem_axes, self.cereb_axes):
            if any(a <= 0 for a in axes):
                raise ValueError("ellipsoid semi-axes must be positive")
        for mod, row in self.intensities.items():
            if len(row) != NUM_CLASSES:
                raise ValueError("intensity table for %s must have %d entries" % (mod, NUM_CLASSES))


def _displacement(rng: np.random.Generator, shape, amplitude: float):
    """Smooth random displacement field from a few low-frequency cosine modes.

    Each mode's coefficient vector is projected orthogonal to its spatial
    frequency vector, making the field divergence-free: subjects deform in
    shape but keep their per-class volumes to first order.
    """
    nz, ny, nx = shape
    z = np.arange(nz)[:, None, None] / nz
    y = np.arange(ny)[None, :, None] / ny
    x = np.arange(nx)[None, None, :] / nx
    n_modes = 4
    freqs = rng.integers(0, 2, size=(n_modes, 3))
    coeffs = rng.normal(0.0, 1.0, size=(n_modes, 3))
    phases = rng.uniform(0.0, 2 * np.pi, size=n_modes)
    fields = [np.zeros(shape) for _ in range(3)]
    for m in range(n_modes):
        fz, fy, fx = freqs[m]
        w = 2 * np.pi * np.array([fz / nz, fy / ny, fx / nx])
        c = coeffs[m]
        wn = np.dot(w, w)
        if wn > 0:
            c = c - (np.dot(c, w) / wn) * w
        wave = np.cos(2 * np.pi * (fz * z + fy * y + fx * x) + phases[m])
        for d in range(3):
            fields[d] += c[d] * wave
    return [amplitude * f / np.sqrt(n_modes) for f in fields]


def _ellipsoid_rho(coords, center_frac, axes_frac, shape):
    zc, yc, xc = coords
    rho2 = np.zeros_like(zc)
    for c, cf, af, n in zip((zc, yc, xc), center_frac, axes_frac, shape):
        rho2 += ((c - cf * n) / (af * n)) ** 2
    return np.sqrt(rho2)


def generate_phantom(spec: PhantomSpec, subject_id: str | None = None) -> Volume:
    """Generate one labeled phantom volume, deterministic in the spec."""
    rng = np.random.default_rng(spec.seed)
    nz, ny, nx = spec.shape
    z, y, x = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    if spec.deformation_px > 0:
        dz, dy, dx = _displacement(rng, spec.shape, spec.deformation_px)
        coords = (z + dz, y + dy, x + dx)
    else:
        # burn the same rng draws so noise is comparable across amplitudes
        _displacement(rng, (1, 1, 1), 0.0)
        coords = (z, y, x)

    rho = _ellipsoid_rho(coords, spec.brain_center, spec.brain_axes, spec.shape)
    labels = np.zeros(spec.shape, dtype=np.uint8)
    r_wm, r_gm, r_csf = spec.shell_radii
    labels[rho <= r_csf] = 1
    labels[rho <= r_gm] = 2
    labels[rho <= r_wm] = 3
    cereb = _ellipsoid_rho(coords, spec.cereb_center, spec.cereb_axes, spec.shape)
    labels[cereb <= 1.0] = 5
    stem = _ellipsoid_rho(coords, spec.stem_center, spec.stem_axes, spec.shape)
    labels[stem <= 1.0] = 4

    _check_coverage(labels)

    modalities = {}
    for mod in ("T1", "T1IR", "T2FLAIR"):
        table = np.asarray(spec.intensities[mod], dtype=np.float64)
        img = table[labels]
        if spec.noise_std > 0:
            img = img + rng.normal(0.0, spec.noise_std, size=spec.shape)
            img = np.clip(img, 0.0, None)
        modalities[mod] = img.astype(np.float32)

    sid = subject_id if subject_id is not None else "%03d" % spec.seed
    return Volume(
        modalities=modalities, labels=labels, spacing=tuple(spec.spacing_mm), subject_id=sid
    )


def _check_coverage(labels: np.ndarray) -> None:
    """Every class must cover >= 1% of in-brain pixels on at least one slice."""
    in_brain = (labels > 0).reshape(labels.shape[0], -1).sum(axis=1)
    ok = np.zeros(NUM_CLASSES, dtype=bool)
    for k in range(NUM_CLASSES):
        counts = (labels == k).reshape(labels.shape[0], -1).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(in_brain > 0, counts / np.maximum(in_brain, 1), 0.0)
        ok[k] = bool((frac >= 0.01).any())
    if not ok.all():
        missing = [k for k in range(NUM_CLASSES) if not ok[k]]
        raise ValueError(
            "infeasible geometry: classes %s never reach 1%% of in-brain pixels" % missing
        )


def generate_cohort(count: int, base_spec: PhantomSpec | None = None):
    """Generate `count` subjects with sequential ids and seeds base_seed + i."""
    base = base_spec if base_spec is not None else PhantomSpec()
    volumes = []
    for i in range(count):
        spec = replace(base, seed=base.seed + i)
        volumes.append(generate_phantom(spec, subject_id="%03d" % i))
    return volumes
