"""Geometric susceptibility phantoms and their text configuration.

Configuration files are ``key = value`` lines.  Top-level keys describe the
grid and the brain mask; each primitive is a section introduced by a bracketed
kind name, which may repeat::

    # comment
    dims = 64, 64, 64
    voxel_size = 1, 1, 1
    mask_center = 32, 32, 32
    mask_radii = 22, 24, 20
    margin = 8
    texture = 0.0
    random_primitives = 0

    [sphere]
    center = 30, 32, 28
    radius = 6
    chi = 0.1

    [cuboid]
    center = 36, 30, 34
    half_extents = 3, 4, 2
    chi = -0.05

    [cylinder]
    center = 32, 36, 32
    radius = 2
    half_length = 6
    axis = 0, 0, 1
    chi = 0.2

    [lesion]
    center = 28, 28, 32
    radius = 3
    chi = 0.8

Coordinates are in voxel units.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .physics import sphere_mask

MAX_CHI = 10.0
LESION_CHI = 0.8
KINDS = ("sphere", "cuboid", "cylinder")


@dataclass(frozen=True)
class Primitive:
    kind: str
    center: Tuple[float, float, float]
    chi: float
    radius: float = 0.0
    half_extents: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    half_length: float = 0.0
    axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if abs(self.chi) > MAX_CHI:
            raise ValueError(f"|chi| must be <= {MAX_CHI} ppm, got {self.chi}")
        if self.kind in ("sphere", "cylinder") and not self.radius > 0:
            raise ValueError(f"{self.kind} radius must be positive")
        if self.kind == "cuboid" and not min(self.half_extents) > 0:
            raise ValueError("cuboid half extents must be positive")
        if self.kind == "cylinder":
            if not self.half_length > 0:
                raise ValueError("cylinder half length must be positive")
            a = np.asarray(self.axis, dtype=float)
            if not np.linalg.norm(a) > 0:
                raise ValueError("cylinder axis must be nonzero")

    def bounds(self):
        c = np.asarray(self.center, dtype=float)
        if self.kind == "sphere":
            ext = np.full(3, self.radius)
        elif self.kind == "cuboid":
            ext = np.asarray(self.half_extents, dtype=float)
        else:
            a = np.abs(np.asarray(self.axis, dtype=float) / np.linalg.norm(self.axis))
            ext = a * self.half_length + np.sqrt(np.clip(1 - a**2, 0, None)) * self.radius
        return c - ext, c + ext

    def voxels(self, dims):
        if self.kind == "sphere":
            return sphere_mask(dims, self.center, self.radius)
        x, y, z = np.ogrid[: dims[0], : dims[1], : dims[2]]
        d = [x - self.center[0], y - self.center[1], z - self.center[2]]
        if self.kind == "cuboid":
            h = self.half_extents
            return (np.abs(d[0]) <= h[0]) & (np.abs(d[1]) <= h[1]) & (np.abs(d[2]) <= h[2])
        a = np.asarray(self.axis, dtype=float)
        a = a / np.linalg.norm(a)
        along = d[0] * a[0] + d[1] * a[1] + d[2] * a[2]
        r2 = d[0] ** 2 + d[1] ** 2 + d[2] ** 2 - along**2
        return (np.abs(along) <= self.half_length) & (r2 <= self.radius**2)


@dataclass(frozen=True)
class Lesion:
    center: Tuple[float, float, float]
    radius: float
    chi: float = LESION_CHI

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("lesion radius must be positive")
        if abs(self.chi) > MAX_CHI:
            raise ValueError(f"|chi| must be <= {MAX_CHI} ppm, got {self.chi}")


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int]
    mask_center: Tuple[float, float, float]
    mask_radii: Tuple[float, float, float]
    voxel_size: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    primitives: Tuple[Primitive, ...] = ()
    lesion: Optional[Lesion] = None
    margin: int = 8
    texture: float = 0.0
    random_primitives: int = 0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ValueError(f"invalid dims {self.dims}")
        if not min(self.mask_radii) > 0:
            raise ValueError("mask radii must be positive")


def _check_fits(spec):
    dims = np.asarray(spec.dims, dtype=float)
    mc, mr = np.asarray(spec.mask_center, float), np.asarray(spec.mask_radii, float)
    if np.any(mc - mr < spec.margin) or np.any(mc + mr > dims - 1 - spec.margin):
        raise ValueError(
            f"mask ellipsoid must stay {spec.margin} voxels from the volume boundary")
    for prim in spec.primitives:
        lo, hi = prim.bounds()
        if np.any(lo < 0) or np.any(hi > dims - 1):
            raise ValueError(f"primitive {prim} does not fit inside dims {spec.dims}")


def ellipsoid_mask(dims, center, radii):
    x, y, z = np.ogrid[: dims[0], : dims[1], : dims[2]]
    return (((x - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2
            + ((z - center[2]) / radii[2]) ** 2) <= 1.0


def random_primitives(spec, rng, count, chi_range=(-0.15, 0.25)):
    """Draw ``count`` random primitives inside the spec's mask ellipsoid."""
    mc = np.asarray(spec.mask_center, float)
    mr = np.asarray(spec.mask_radii, float)
    size_scale = float(min(mr))
    out = []
    for _ in range(count):
        kind = KINDS[rng.integers(len(KINDS))]
        # center inside the inner 70% of the ellipsoid
        u = rng.normal(size=3)
        u *= rng.uniform(0, 0.7) / np.linalg.norm(u)
        center = tuple(mc + u * mr)
        chi = float(rng.uniform(*chi_range))
        if kind == "sphere":
            prim = Primitive(kind, center, chi, radius=float(rng.uniform(0.08, 0.3) * size_scale))
        elif kind == "cuboid":
            he = tuple(float(h) for h in rng.uniform(0.06, 0.25, size=3) * size_scale)
            prim = Primitive(kind, center, chi, half_extents=he)
        else:
            axis = rng.normal(size=3)
            prim = Primitive(kind, center, chi, radius=float(rng.uniform(0.04, 0.12) * size_scale),
                             half_length=float(rng.uniform(0.2, 0.5) * size_scale),
                             axis=tuple(float(a) for a in axis / np.linalg.norm(axis)))
        lo, hi = prim.bounds()
        if np.all(lo >= 0) and np.all(hi <= np.asarray(spec.dims) - 1):
            out.append(prim)
    return out


def generate_phantom(spec, rng=None):
    """Rasterize a phantom spec into ``(chi, mask)`` arrays.

    Primitives add up; the sum (plus optional smooth texture) is zeroed
    outside the mask ellipsoid, and the lesion is written last, replacing
    whatever lies beneath it.
    """
    _check_fits(spec)
    dims = tuple(int(n) for n in spec.dims)
    prims = list(spec.primitives)
    if spec.random_primitives or spec.texture:
        if rng is None:
            raise ValueError("random primitives or texture require an rng")
    if spec.random_primitives:
        prims += random_primitives(spec, rng, spec.random_primitives)
    mask = ellipsoid_mask(dims, spec.mask_center, spec.mask_radii)
    chi = np.zeros(dims)
    for prim in prims:
        chi[prim.voxels(dims)] += prim.chi
    if spec.texture:
        noise = ndimage.gaussian_filter(rng.normal(size=dims), 1.5, mode="wrap")
        chi += spec.texture * noise / noise.std()
    chi *= mask
    if spec.lesion is not None:
        lz = sphere_mask(dims, spec.lesion.center, spec.lesion.radius) & mask
        chi[lz] = spec.lesion.chi
    return chi, mask.astype(np.float64)


def default_spec(dims=(64, 64, 64), margin=8, lesion=False, **kw):
    """Centered mask ellipsoid filling the padded interior, no primitives."""
    dims = tuple(int(n) for n in dims)
    center = tuple((n - 1) / 2.0 for n in dims)
    radii = tuple(0.92 * ((n - 1) / 2.0 - margin) for n in dims)
    les = None
    if lesion:
        les = Lesion(tuple(c + 0.35 * r for c, r in zip(center, radii)), 0.18 * min(radii))
    return PhantomSpec(dims, center, radii, margin=margin, lesion=les, **kw)


def random_spec(dims, rng, margin=4, n_primitives=10, lesion=False, texture=0.02):
    """Randomized training phantom: jittered mask, random primitives, optional lesion."""
    base = default_spec(dims, margin=margin)
    radii = tuple(float(r * rng.uniform(0.85, 1.0)) for r in base.mask_radii)
    spec = replace(base, mask_radii=radii, texture=texture)
    prims = tuple(random_primitives(spec, rng, n_primitives))
    les = None
    if lesion:
        u = rng.normal(size=3)
        u *= rng.uniform(0, 0.5) / np.linalg.norm(u)
        center = tuple(float(c) for c in np.asarray(spec.mask_center) + u * np.asarray(radii))
        les = Lesion(center, float(rng.uniform(0.1, 0.2) * min(radii)))
    return replace(spec, primitives=prims, lesion=les)


# text configuration ---------------------------------------------------------

def _floats(s, n=None):
    vals = tuple(float(v) for v in s.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} values, got {s!r}")
    return vals


_TOP = {
    "dims": lambda s: tuple(int(v) for v in _floats(s, 3)),
    "voxel_size": lambda s: _floats(s, 3),
    "mask_center": lambda s: _floats(s, 3),
    "mask_radii": lambda s: _floats(s, 3),
    "margin": int,
    "texture": float,
    "random_primitives": int,
}
_SECTION = {
    "center": lambda s: _floats(s, 3),
    "half_extents": lambda s: _floats(s, 3),
    "axis": lambda s: _floats(s, 3),
    "radius": float,
    "half_length": float,
    "chi": float,
}


def parse_phantom_config(text):
    top, sections, current = {}, [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = (line[1:-1].strip().lower(), {})
            sections.append(current)
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        table = _TOP if current is None else _SECTION
        if key not in table:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        (top if current is None else current[1])[key] = table[key](value)
    if "dims" not in top:
        raise ValueError("phantom config needs 'dims'")
    prims, lesion = [], None
    for kind, kv in sections:
        if kind == "lesion":
            if lesion is not None:
                raise ValueError("at most one [lesion] section")
            lesion = Lesion(**{k: kv[k] for k in ("center", "radius", "chi") if k in kv})
        else:
            prims.append(Primitive(kind, **kv))
    base = default_spec(top["dims"], margin=top.get("margin", 8))
    return PhantomSpec(
        dims=top["dims"],
        mask_center=top.get("mask_center", base.mask_center),
        mask_radii=top.get("mask_radii", base.mask_radii),
        voxel_size=top.get("voxel_size", (1.0, 1.0, 1.0)),
        primitives=tuple(prims),
        lesion=lesion,
        margin=top.get("margin", 8),
        texture=top.get("texture", 0.0),
        random_primitives=top.get("random_primitives", 0),
    )


def load_phantom_config(path):
    with open(path) as f:
        return parse_phantom_config(f.read())


def _fmt(vals):
    return ", ".join(repr(float(v)) for v in vals)


def format_phantom_config(spec):
    lines = [
        f"dims = {', '.join(str(int(n)) for n in spec.dims)}",
        f"voxel_size = {_fmt(spec.voxel_size)}",
        f"mask_center = {_fmt(spec.mask_center)}",
        f"mask_radii = {_fmt(spec.mask_radii)}",
        f"margin = {spec.margin}",
        f"texture = {spec.texture!r}",
        f"random_primitives = {spec.random_primitives}",
    ]
    for prim in spec.primitives:
        lines += ["", f"[{prim.kind}]", f"center = {_fmt(prim.center)}", f"chi = {prim.chi!r}"]
        if prim.kind == "sphere":
            lines.append(f"radius = {prim.radius!r}")
        elif prim.kind == "cuboid":
            lines.append(f"half_extents = {_fmt(prim.half_extents)}")
        else:
            lines += [f"radius = {prim.radius!r}", f"half_length = {prim.half_length!r}",
                      f"axis = {_fmt(prim.axis)}"]
    if spec.lesion is not None:
        les = spec.lesion
        lines += ["", "[lesion]", f"center = {_fmt(les.center)}", f"radius = {les.radius!r}",
                  f"chi = {les.chi!r}"]
    return "\n".join(lines) + "\n"
