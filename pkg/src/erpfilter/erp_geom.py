"""Spherical geometry of equirectangular (ERP) frames.

Latitude weight maps, weighted MSE / WS-PSNR, and gnomonic viewport
extraction. Viewport and ERP pixel coordinates follow the 1-based
convention of the projection formulas (pixel k has its centre at k, the
ERP longitude axis spans [0.5, W + 0.5]); rasters are 0-based numpy arrays
and the conversion happens only in :func:`bilinear_weights`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INF = math.inf  # PSNR of identical images; never capped


def is_inf_marker(value: float) -> bool:
    return math.isinf(value) and value > 0


def format_db(value: float, digits: int = 4) -> str:
    return "inf" if is_inf_marker(value) else f"{value:.{digits}f}"


# ---------------------------------------------------------------------------
# weights and weighted error
# ---------------------------------------------------------------------------

def row_factors(height: int) -> np.ndarray:
    """Unnormalised area factor cos((j - H/2 + 1/2) * pi / H) for rows j = 0..H-1."""
    j = np.arange(height, dtype=np.float64)
    return np.cos((j - height / 2 + 0.5) * np.pi / height)


def weight_map(width: int, height: int) -> np.ndarray:
    """(H, W) spherical-area weights normalised to sum to one."""
    if width < 1 or height < 1:
        raise ValueError(f"weight map needs positive dimensions, got {width}x{height}")
    g = np.repeat(row_factors(height)[:, None], width, axis=1)
    return g / g.sum()


def _check_same(a: np.ndarray, b: np.ndarray, g: np.ndarray | None = None) -> None:
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if g is not None and g.shape != a.shape:
        raise ValueError(f"weight map shape {g.shape} does not match frames {a.shape}")


def wmse(a: np.ndarray, b: np.ndarray, weights: np.ndarray | None = None) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if weights is None:
        weights = weight_map(a.shape[1], a.shape[0]) if a.ndim == 2 else None
    _check_same(a, b, weights)
    return float(np.sum((a - b) ** 2 * weights))


def psnr_from_mse(mse: float, peak: float = 255.0) -> float:
    if mse <= 0:
        return INF
    return 10.0 * math.log10(peak * peak / mse)


def ws_psnr(a: np.ndarray, b: np.ndarray, weights: np.ndarray | None = None, peak: float = 255.0) -> float:
    return psnr_from_mse(wmse(a, b, weights), peak)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)), peak)


# ---------------------------------------------------------------------------
# viewports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ViewportSpec:
    lon: float = 0.0  # viewing direction, degrees
    lat: float = 0.0
    fov_w: float = 75.0  # field angles, degrees
    fov_h: float = 75.0
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if not (0 < self.fov_w < 180 and 0 < self.fov_h < 180):
            raise ValueError(f"field angles must lie in (0, 180), got {self.fov_w}, {self.fov_h}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"viewport raster must be at least 1x1, got {self.width}x{self.height}")
        if not -90 <= self.lat <= 90:
            raise ValueError(f"viewport latitude {self.lat} outside [-90, 90]")
        if not -180 <= self.lon <= 180:
            raise ValueError(f"viewport longitude {self.lon} outside [-180, 180]")


@dataclass
class SampleGrid:
    """Per-viewport-pixel sphere and ERP coordinates, arrays shaped (H_v, W_v)."""

    lon: np.ndarray  # degrees, wrapped to (-180, 180]
    lat: np.ndarray  # degrees
    p: np.ndarray  # ERP column position, 1-based, in [0.5, W + 0.5]
    q: np.ndarray  # ERP row position, 1-based
    erp_width: int
    erp_height: int

    def to_csv(self, path) -> None:
        hv, wv = self.p.shape
        with open(path, "w") as fh:
            fh.write("x,y,p,q\n")
            for y in range(hv):
                for x in range(wv):
                    fh.write(f"{x + 1},{y + 1},{self.p[y, x]!r},{self.q[y, x]!r}\n")


def wrap_lon(lon: np.ndarray) -> np.ndarray:
    """Wrap degrees into (-180, 180]."""
    out = np.mod(lon + 180.0, 360.0) - 180.0
    return np.where(out == -180.0, 180.0, out)


def sphere_to_erp(lon, lat, width: int, height: int):
    """Longitude/latitude (degrees) to 1-based ERP pixel positions (p, q)."""
    p = (np.asarray(lon) / 360.0 + 0.5) * width + 0.5
    q = (0.5 - np.asarray(lat) / 180.0) * height + 0.5
    return p, q


def erp_to_sphere(p, q, width: int, height: int):
    lon = ((np.asarray(p) - 0.5) / width - 0.5) * 360.0
    lat = (0.5 - (np.asarray(q) - 0.5) / height) * 180.0
    return lon, lat


def viewport_grid(spec: ViewportSpec, width: int, height: int) -> SampleGrid:
    """Inverse gnomonic projection of every viewport pixel onto the ERP raster."""
    x = np.arange(1, spec.width + 1, dtype=np.float64)
    y = np.arange(1, spec.height + 1, dtype=np.float64)
    fx = (2 * x - 1 - spec.width) / spec.width * math.tan(math.radians(spec.fov_w) / 2)
    fy = -(2 * y - 1 - spec.height) / spec.height * math.tan(math.radians(spec.fov_h) / 2)
    fx, fy = np.meshgrid(fx, fy)

    rho = np.hypot(fx, fy)
    c = np.arctan(rho)
    # sin(c)/rho -> 1 as rho -> 0
    safe = np.where(rho > 0, rho, 1.0)
    sinc_ratio = np.where(rho > 0, np.sin(c) / safe, 1.0)
    th_v = math.radians(spec.lat)

    num = fx * sinc_ratio
    den = math.cos(th_v) * np.cos(c) - fy * math.sin(th_v) * sinc_ratio
    lon = spec.lon + np.degrees(np.arctan2(num, den))
    lat_arg = np.cos(c) * math.sin(th_v) + fy * sinc_ratio * math.cos(th_v)
    lat = np.degrees(np.arcsin(np.clip(lat_arg, -1.0, 1.0)))

    centre = rho == 0
    lon = np.where(centre, spec.lon, lon)
    lat = np.where(centre, spec.lat, lat)
    lon = wrap_lon(lon)

    p, q = sphere_to_erp(lon, lat, width, height)
    return SampleGrid(lon=lon, lat=lat, p=p, q=q, erp_width=width, erp_height=height)


def bilinear_weights(p: np.ndarray, q: np.ndarray, width: int, height: int,
                     wrap_x: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Flat neighbour indices and bilinear weights, each shaped p.shape + (4,).

    Columns wrap around the 360-degree seam when ``wrap_x``; rows (and
    columns otherwise) clamp to the raster.
    """
    u = np.asarray(p, dtype=np.float64) - 1.0
    v = np.asarray(q, dtype=np.float64) - 1.0
    x0 = np.floor(u)
    y0 = np.floor(v)
    ax = u - x0
    ay = v - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    if wrap_x:
        xa, xb = np.mod(x0, width), np.mod(x0 + 1, width)
    else:
        xa, xb = np.clip(x0, 0, width - 1), np.clip(x0 + 1, 0, width - 1)
    ya, yb = np.clip(y0, 0, height - 1), np.clip(y0 + 1, 0, height - 1)
    index = np.stack([ya * width + xa, ya * width + xb, yb * width + xa, yb * width + xb], axis=-1)
    weights = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=-1)
    return index, weights


def bilinear_sample(frame: np.ndarray, grid: SampleGrid, wrap_x: bool = True) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape
    index, weights = bilinear_weights(grid.p, grid.q, w, h, wrap_x)
    return np.sum(frame.reshape(-1)[index] * weights, axis=-1)


def extract_viewport(frame: np.ndarray, spec: ViewportSpec) -> np.ndarray:
    """Float viewport image sampled from an ERP luma frame."""
    h, w = np.asarray(frame).shape
    return bilinear_sample(frame, viewport_grid(spec, w, h))


def viewport_psnr(a: np.ndarray, b: np.ndarray, spec: ViewportSpec, peak: float = 255.0) -> float:
    return psnr(extract_viewport(a, spec), extract_viewport(b, spec), peak)
