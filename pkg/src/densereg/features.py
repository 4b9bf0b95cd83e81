"""Handcrafted dense feature extraction.

Two extractors produce multi-channel feature volumes on a strided grid:

* self-similarity context (SSC): 12 channels comparing small patches around
  the 6-neighborhood of each voxel, invariant to global intensity shifts;
* intensity-gradient: 4 cheap channels (standardized smoothed intensity
  plus raw gradient components) used as a baseline and in fast tests.

Feature grids live in the same normalized coordinate frame as volumes, so
features extracted from differently strided grids stay comparable.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import ndimage

from .geometry import Volume3D, index_to_normalized, sample_points_linear

__all__ = [
    "FeatureVolume",
    "extract_ssc",
    "extract_intensity_gradient",
    "sample_features_at",
    "SSC_PAIRS",
]

# The 6-neighborhood offsets in a fixed order; channel j compares the j-th
# unordered pair of offsets lying on different axes (12 pairs total).
_NEIGHBORS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
SSC_PAIRS = tuple((a, b) for a, b in combinations(_NEIGHBORS, 2)
                  if np.argmax(np.abs(a)) != np.argmax(np.abs(b)))
assert len(SSC_PAIRS) == 12


@dataclass(frozen=True)
class FeatureVolume:
    """Multi-channel features on a regular grid in normalized coordinates.

    ``data`` has shape ``(C, G1, G2, G3)``.  Cell ``(i, j, k)`` of the grid
    sits at ``origin + step * (i, j, k)``; for a stride-s subsampling of an
    image the cells coincide with the source voxel centers they were
    extracted at.
    """

    data: np.ndarray
    origin: tuple
    step: tuple

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError(f"feature data must be (C, G1, G2, G3), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature data must be finite")
        origin = tuple(float(v) for v in self.origin)
        step = tuple(float(v) for v in self.step)
        if len(origin) != 3 or len(step) != 3 or any(s <= 0 for s in step):
            raise ValueError("origin and step must be three values, step positive")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "step", step)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def grid_counts(self) -> tuple:
        return self.data.shape[1:]

    def axis_coords(self, axis: int) -> np.ndarray:
        """Normalized coordinates of grid cells along one axis."""
        return self.origin[axis] + self.step[axis] * np.arange(self.grid_counts[axis])

    def axis_fracs(self, axis: int, coords) -> np.ndarray:
        """Fractional grid indices of normalized coordinates along one axis."""
        return (np.asarray(coords, dtype=np.float64) - self.origin[axis]) / self.step[axis]


def _shifted(data: np.ndarray, offset) -> np.ndarray:
    """Border-replicated integer shift: out[v] = data[clip(v + offset)]."""
    out = data
    for axis, o in enumerate(offset):
        if o:
            idx = np.clip(np.arange(data.shape[axis]) + o, 0, data.shape[axis] - 1)
            out = np.take(out, idx, axis=axis)
    return out


def _subsample(full: np.ndarray, dims, stride: int):
    """Keep the center voxel of every stride-block; return data + grid frame."""
    offset = stride // 2
    takes = [np.arange(offset, n, stride) for n in dims]
    sub = full[np.ix_(np.arange(full.shape[0]), *takes)]
    origin = tuple(float(index_to_normalized(offset, n)) for n in dims)
    step = tuple(2.0 * stride / n for n in dims)
    return sub, origin, step


def extract_ssc(vol: Volume3D, patch_radius: int = 1,
                sigma_policy: str = "local-mean", stride: int = 3) -> FeatureVolume:
    """Self-similarity context descriptors.

    Channel j at voxel v is ``exp(-D_j(v) / sigma2(v))`` where ``D_j`` is
    the mean squared distance between the patches centered at ``v + n_a``
    and ``v + n_b`` for the j-th neighbor pair, and ``sigma2`` is the local
    mean of the 12 distances.  Where ``sigma2 == 0`` (constant regions) the
    value is 1.0 by definition: a constant image is perfectly self-similar.
    Values lie in [0, 1]; adding a constant to the image leaves them
    unchanged.
    """
    if sigma_policy != "local-mean":
        raise ValueError(f"unsupported sigma policy: {sigma_policy!r}")
    if patch_radius < 0 or stride < 1:
        raise ValueError("patch_radius must be >= 0 and stride >= 1")
    dims = vol.dims
    need = 2 * patch_radius + 3
    if any(n < need for n in dims):
        raise ValueError(f"volume dims {dims} too small for patch radius "
                         f"{patch_radius} (need >= {need} per axis)")
    data = vol.data
    size = 2 * patch_radius + 1
    dists = np.empty((12,) + dims)
    for j, (na, nb) in enumerate(SSC_PAIRS):
        diff2 = (_shifted(data, na) - _shifted(data, nb)) ** 2
        if patch_radius == 0:
            dists[j] = diff2
        else:
            dists[j] = ndimage.uniform_filter(diff2, size=size, mode="nearest")
    # the sliding-sum box filter can leave tiny negative residues on
    # constant regions; clamp so the exponent below stays <= 0
    np.maximum(dists, 0.0, out=dists)
    sigma2 = dists.mean(axis=0)
    safe = np.where(sigma2 > 0, sigma2, 1.0)
    chans = np.where(sigma2 > 0, np.exp(-dists / safe), 1.0)
    sub, origin, step = _subsample(chans, dims, stride)
    return FeatureVolume(sub, origin, step)


def extract_intensity_gradient(vol: Volume3D, smooth_sigma: float = 1.0,
                               stride: int = 3) -> FeatureVolume:
    """Baseline features: standardized smoothed intensity + raw gradients.

    Channel 0 is the Gaussian-smoothed intensity standardized to zero mean
    and unit variance over the volume (all zeros for a constant volume);
    channels 1-3 are central-difference gradients of the raw intensity per
    voxel step, one-sided at the borders.
    """
    dims = vol.dims
    if any(n < 3 for n in dims):
        raise ValueError(f"volume dims {dims} too small (need >= 3 per axis)")
    data = vol.data
    smooth = ndimage.gaussian_filter(data, smooth_sigma, mode="nearest")
    std = smooth.std()
    ch0 = (smooth - smooth.mean()) / std if std > 0 else np.zeros(dims)
    grads = np.gradient(data)
    full = np.stack([ch0] + list(grads), axis=0)
    sub, origin, step = _subsample(full, dims, stride)
    return FeatureVolume(sub, origin, step)


def sample_features_at(fvol: FeatureVolume, points) -> np.ndarray:
    """Feature vectors at normalized points of shape ``(..., 3)``.

    Each channel is trilinearly interpolated on the feature grid with
    border clamping; the result has shape ``(..., C)``.
    """
    points = np.asarray(points, dtype=np.float64)
    fracs = np.stack([fvol.axis_fracs(a, points[..., a]) for a in range(3)], axis=-1)
    out = np.stack([sample_points_linear(fvol.data[c], fracs)
                    for c in range(fvol.channels)], axis=-1)
    return out
