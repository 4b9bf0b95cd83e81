"""Volumes, normalized coordinates, control grids, and interpolation.

Spatial positions are continuous coordinates in (-1, +1) per axis.  A grid
with ``n`` cells along an axis places cell centers at ``2*(i+0.5)/n - 1``,
so the mapping between integer indices and normalized coordinates is an
affine bijection shared by image volumes, feature grids, control grids and
full-resolution displacement fields.

Sampling outside (-1, 1) clamps to the border value: large displacements
near the volume edge degrade gracefully instead of reading zeros.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Volume3D",
    "ControlGrid",
    "DisplacementSpace",
    "DisplacementField",
    "index_to_normalized",
    "normalized_to_index",
    "axis_centers",
    "lerp_axis",
    "sample_separable",
    "sample_points_linear",
    "sample_points_nearest",
    "trilinear_sample",
    "nearest_sample",
    "sample_volume",
    "spatial_gradient",
]


# ---------------------------------------------------------------------------
# Coordinate conventions
# ---------------------------------------------------------------------------

def index_to_normalized(i, n: int):
    """Normalized coordinate of cell center ``i`` on an axis with ``n`` cells."""
    return 2.0 * (np.asarray(i, dtype=np.float64) + 0.5) / n - 1.0


def normalized_to_index(x, n: int):
    """Fractional cell index of normalized coordinate ``x`` (inverse of
    :func:`index_to_normalized`)."""
    return (np.asarray(x, dtype=np.float64) + 1.0) * (n / 2.0) - 0.5


def axis_centers(n: int) -> np.ndarray:
    """Normalized coordinates of all cell centers along an axis."""
    return index_to_normalized(np.arange(n), n)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Volume3D:
    """Scalar 3D image: ``data`` indexed ``[z, y, x]``-style as ``(D, H, W)``.

    Intensity volumes hold float64 data; label volumes hold non-negative
    integers and are sampled nearest-neighbor.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    is_label: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if any(s <= 0 for s in data.shape):
            raise ValueError(f"volume dimensions must be positive, got {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0.0 for s in spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        if self.is_label:
            if not np.issubdtype(data.dtype, np.integer):
                if not np.all(data == np.round(data)):
                    raise ValueError("label volume requires integer values")
                data = data.astype(np.int32)
            if data.min(initial=0) < 0:
                raise ValueError("label volume requires non-negative values")
            data = np.ascontiguousarray(data)
        else:
            data = np.ascontiguousarray(data, dtype=np.float64)
        object.__setattr__(self, "data", _freeze(data.copy() if data is self.data else data))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def axis_coords(self, axis: int) -> np.ndarray:
        return axis_centers(self.dims[axis])


@dataclass(frozen=True)
class ControlGrid:
    """Coarse grid of control points placed uniformly in (-1, +1)^3.

    Point ``(i, j, k)`` sits at ``index_to_normalized`` of its index on each
    axis; points enumerate row-major.
    """

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.counts).repeat(3)[:3]) \
            if np.isscalar(self.counts) else tuple(int(c) for c in self.counts)
        if len(counts) != 3 or any(c < 1 for c in counts):
            raise ValueError(f"control grid counts must be three positive ints, got {self.counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def num_points(self) -> int:
        return int(np.prod(self.counts))

    def axis_coords(self, axis: int) -> np.ndarray:
        return axis_centers(self.counts[axis])

    def spacing(self, axis: int) -> float:
        return 2.0 / self.counts[axis]

    def points(self) -> np.ndarray:
        """All control points as a ``(K1, K2, K3, 3)`` array."""
        g = np.meshgrid(*[self.axis_coords(a) for a in range(3)], indexing="ij")
        return np.stack(g, axis=-1)


@dataclass(frozen=True)
class DisplacementSpace:
    """Quantized displacement offsets ``L``: the cartesian product of
    ``q * linspace(-1, 1, steps)`` per axis.

    ``steps`` must be odd so the zero offset is in ``L``; the set is
    symmetric (``-d in L`` for every ``d``).  An axis with a single step
    contributes only the zero offset.
    """

    q: float
    steps: tuple = (15, 15, 15)

    def __post_init__(self):
        q = float(self.q)
        if not (q > 0.0):
            raise ValueError(f"capture range q must be positive, got {q}")
        raw = self.steps
        steps = (int(raw),) * 3 if np.isscalar(raw) else tuple(int(s) for s in raw)
        if len(steps) != 3:
            raise ValueError(f"steps must be a scalar or three ints, got {raw}")
        for s in steps:
            if s < 1 or s % 2 == 0:
                raise ValueError(f"steps must be odd and >= 1 per axis, got {steps}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "steps", steps)

    @property
    def num_offsets(self) -> int:
        return int(np.prod(self.steps))

    def axis_offsets(self, axis: int) -> np.ndarray:
        s = self.steps[axis]
        if s == 1:
            return np.zeros(1)
        return self.q * np.linspace(-1.0, 1.0, s)

    def spacing(self, axis: int) -> float:
        """Distance between adjacent offsets along an axis (0 for a single step)."""
        s = self.steps[axis]
        return 0.0 if s == 1 else 2.0 * self.q / (s - 1)

    def offsets(self) -> np.ndarray:
        """All offsets as a ``(S1, S2, S3, 3)`` array in row-major order."""
        g = np.meshgrid(*[self.axis_offsets(a) for a in range(3)], indexing="ij")
        return np.stack(g, axis=-1)


@dataclass(frozen=True)
class DisplacementField:
    """3-vector field in normalized units on a center-aligned grid.

    ``vectors`` has shape ``(G1, G2, G3, 3)``; the grid may be a control
    grid or the full image resolution, both share the center-aligned
    coordinate convention.
    """

    vectors: np.ndarray

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vec.ndim != 4 or vec.shape[-1] != 3:
            raise ValueError(f"field vectors must have shape (G1, G2, G3, 3), got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("field vectors must be finite")
        object.__setattr__(self, "vectors", _freeze(vec.copy() if vec is self.vectors else vec))

    @property
    def counts(self) -> tuple:
        return self.vectors.shape[:3]

    def spacing(self, axis: int) -> float:
        return 2.0 / self.counts[axis]


# ---------------------------------------------------------------------------
# Interpolation primitives (fractional-index space)
# ---------------------------------------------------------------------------

def lerp_axis(data: np.ndarray, t: np.ndarray, axis: int) -> np.ndarray:
    """Linear interpolation of ``data`` along ``axis`` at fractional indices
    ``t`` (1D), clamped to the border.  The axis length becomes ``len(t)``."""
    n = data.shape[axis]
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, n - 1.0)
    if n == 1:
        return np.take(data, np.zeros(len(t), dtype=np.intp), axis=axis)
    i0 = np.minimum(t.astype(np.intp), n - 2)
    w = t - i0
    shape = [1] * data.ndim
    shape[axis] = len(t)
    w = w.reshape(shape)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i0 + 1, axis=axis)
    return a * (1.0 - w) + b * w


def sample_separable(data: np.ndarray, fracs) -> np.ndarray:
    """Trilinear sampling of a 3D array on the outer-product grid of three
    1D fractional-index vectors.  Exploits separability of the trilinear
    interpolant; equivalent to pointwise sampling at every grid node."""
    out = data
    for axis, t in enumerate(fracs):
        out = lerp_axis(out, t, axis)
    return out


def _corner_setup(data: np.ndarray, fracs: np.ndarray):
    idx0, weights = [], []
    for axis in range(3):
        n = data.shape[axis]
        t = np.clip(fracs[..., axis], 0.0, n - 1.0)
        i0 = np.minimum(t.astype(np.intp), max(n - 2, 0))
        idx0.append(i0)
        weights.append(t - i0 if n > 1 else np.zeros_like(t))
    return idx0, weights


def sample_points_linear(data: np.ndarray, fracs: np.ndarray) -> np.ndarray:
    """Trilinear sampling of a 3D array at arbitrary fractional-index
    points ``fracs`` of shape ``(..., 3)``, clamped to the border."""
    fracs = np.asarray(fracs, dtype=np.float64)
    idx0, w = _corner_setup(data, fracs)
    out = np.zeros(fracs.shape[:-1], dtype=np.float64)
    for b0 in (0, 1):
        for b1 in (0, 1):
            for b2 in (0, 1):
                i = [np.minimum(idx0[a] + b, data.shape[a] - 1)
                     for a, b in zip(range(3), (b0, b1, b2))]
                weight = ((w[0] if b0 else 1.0 - w[0])
                          * (w[1] if b1 else 1.0 - w[1])
                          * (w[2] if b2 else 1.0 - w[2]))
                out += data[tuple(i)] * weight
    return out


def sample_points_nearest(data: np.ndarray, fracs: np.ndarray) -> np.ndarray:
    """Nearest-neighbor sampling at fractional-index points, clamped."""
    fracs = np.asarray(fracs, dtype=np.float64)
    idx = []
    for axis in range(3):
        n = data.shape[axis]
        i = np.rint(np.clip(fracs[..., axis], 0.0, n - 1.0)).astype(np.intp)
        idx.append(i)
    return data[tuple(idx)]


# ---------------------------------------------------------------------------
# Operations on volumes and fields
# ---------------------------------------------------------------------------

def _vol_fracs(vol: Volume3D, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    fracs = np.empty_like(points)
    for axis in range(3):
        fracs[..., axis] = normalized_to_index(points[..., axis], vol.dims[axis])
    return fracs


def sample_volume(vol: Volume3D, points: np.ndarray) -> np.ndarray:
    """Sample a volume at normalized points of shape ``(..., 3)``; trilinear
    for intensity volumes, nearest-neighbor for label volumes."""
    fracs = _vol_fracs(vol, points)
    if vol.is_label:
        return sample_points_nearest(vol.data, fracs)
    return sample_points_linear(vol.data, fracs)


def trilinear_sample(vol: Volume3D, p) -> float:
    """Trilinear interpolant of ``vol`` at one normalized point ``p``;
    coordinates outside (-1, 1) clamp to the border value."""
    fracs = _vol_fracs(vol, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return float(sample_points_linear(vol.data, fracs)[0])


def nearest_sample(vol: Volume3D, p):
    """Nearest-neighbor sample at one normalized point (for label volumes)."""
    fracs = _vol_fracs(vol, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return sample_points_nearest(vol.data, fracs)[0]


def spatial_gradient(field: DisplacementField) -> np.ndarray:
    """Spatial gradients of all field components w.r.t. normalized
    coordinates: central differences in the interior, one-sided at borders.

    Returns shape ``(G1, G2, G3, 3, 3)`` where ``[..., c, a]`` is the
    derivative of component ``c`` along axis ``a``.
    """
    counts = field.counts
    if any(c < 2 for c in counts):
        raise ValueError(f"gradient needs >= 2 points per axis, got grid {counts}")
    out = np.empty(counts + (3, 3), dtype=np.float64)
    for c in range(3):
        comp = field.vectors[..., c]
        for a in range(3):
            out[..., c, a] = np.gradient(comp, field.spacing(a), axis=a)
    return out
