"""From regularized costs to displacement fields, warps, and losses.

The cost tensor is converted to per-point probability distributions over
the displacement space with a stabilized softmax; the expected displacement
under that distribution gives a smooth control-grid field, which is
trilinearly upsampled to image resolution and used to warp the moving
volume.  Loss terms (diffusion penalty, probabilistic label loss) quantify
field smoothness and label agreement.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .correlation import CostTensor6D
from .features import FeatureVolume
from .geometry import (
    ControlGrid,
    DisplacementField,
    DisplacementSpace,
    Volume3D,
    axis_centers,
    normalized_to_index,
    sample_points_linear,
    sample_points_nearest,
    sample_separable,
    spatial_gradient,
)
from .regularizer import RegularizerParams, tuned_params

__all__ = [
    "ProbTensor6D",
    "RegistrationConfig",
    "softmax_probabilities",
    "expected_displacement",
    "upsample_field",
    "warp",
    "diffusion_penalty",
    "nonlocal_label_loss",
]


@dataclass(frozen=True)
class ProbTensor6D:
    """Displacement probabilities per control point, same layout as
    :class:`CostTensor6D`; each point's distribution sums to one."""

    values: np.ndarray
    grid: ControlGrid
    space: DisplacementSpace

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        want = tuple(self.grid.counts) + tuple(self.space.steps)
        if vals.shape != want:
            raise ValueError(f"probability tensor shape {vals.shape} does not "
                             f"match grid {self.grid.counts} x space {self.space.steps}")
        if vals.min(initial=0.0) < 0.0 or vals.max(initial=0.0) > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        sums = vals.sum(axis=(3, 4, 5))
        if not np.allclose(sums, 1.0, atol=1e-5):
            raise ValueError("distributions must sum to 1 per control point")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def grid_shape(self) -> tuple:
        return self.values.shape[:3]


@dataclass(frozen=True)
class RegistrationConfig:
    """End-to-end settings for one registration run.

    ``diffusion_weight`` scales the smoothness penalty; the default pairs
    with a 32-per-axis control grid.  ``feature`` selects the extractor
    ("ssc" or "intensity-gradient"); ``feature_stride`` the feature-grid
    subsampling.  The displacement capture range must stay below 1 so the
    quantized offsets remain inside the normalized volume.
    """

    diffusion_weight: float = 1.5
    space: DisplacementSpace = dc_field(default_factory=lambda: DisplacementSpace(0.4, 15))
    grid_counts: tuple = (32, 32, 32)
    feature: str = "ssc"
    feature_stride: int = 3
    patch_radius: int = 1
    reg_params: RegularizerParams = dc_field(default_factory=tuned_params)

    def __post_init__(self):
        if self.diffusion_weight < 0.0:
            raise ValueError(f"diffusion weight must be >= 0, got {self.diffusion_weight}")
        if not (0.0 < self.space.q < 1.0):
            raise ValueError(f"capture range must lie in (0, 1), got {self.space.q}")
        if self.feature not in ("ssc", "intensity-gradient"):
            raise ValueError(f"unknown feature choice: {self.feature!r}")
        counts = self.grid_counts
        counts = (int(counts),) * 3 if np.isscalar(counts) else tuple(int(c) for c in counts)
        object.__setattr__(self, "grid_counts", counts)

    def control_grid(self) -> ControlGrid:
        return ControlGrid(self.grid_counts)


def softmax_probabilities(cost: CostTensor6D, temperature: float) -> ProbTensor6D:
    """Per-point softmax of negated scaled costs over the displacement dims.

    ``p(k, d) = exp(-T c(k, d)) / sum_d' exp(-T c(k, d'))``, computed with
    per-point max subtraction so arbitrarily large costs stay finite.  Any
    uniform bias on a point's costs cancels.
    """
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = -temperature * cost.values
    m = z.max(axis=(3, 4, 5), keepdims=True)
    e = np.exp(z - m)
    e /= e.sum(axis=(3, 4, 5), keepdims=True)
    return ProbTensor6D(e, cost.grid, cost.space)


def expected_displacement(prob: ProbTensor6D) -> DisplacementField:
    """Probability-weighted mean displacement per control point.

    Marginalizes the distribution per displacement axis and takes the dot
    product with that axis's offsets; components are bounded by the capture
    range since they are convex combinations of the offsets.
    """
    vals = prob.values
    space = prob.space
    comps = []
    for a in range(3):
        reduce_axes = tuple(ax for ax in (3, 4, 5) if ax != a + 3)
        marginal = vals.sum(axis=reduce_axes)
        comps.append(marginal @ space.axis_offsets(a))
    return DisplacementField(np.stack(comps, axis=-1))


def upsample_field(ctrl: DisplacementField, dims) -> DisplacementField:
    """Trilinear upsampling of a control-grid field to full resolution.

    Both grids use center-aligned normalized coordinates, so a voxel
    center's position in control-grid index space is a direct coordinate
    conversion; beyond the outermost control points values clamp.
    """
    counts = ctrl.counts
    if any(c < 2 for c in counts):
        raise ValueError(f"control grid must have >= 2 points per axis, got {counts}")
    dims = (int(dims),) * 3 if np.isscalar(dims) else tuple(int(d) for d in dims)
    fracs = [normalized_to_index(axis_centers(dims[a]), counts[a]) for a in range(3)]
    out = np.stack([sample_separable(ctrl.vectors[..., c], fracs) for c in range(3)],
                   axis=-1)
    return DisplacementField(out)


def warp(vol: Volume3D, field: DisplacementField, mode: str = None) -> Volume3D:
    """Resample ``vol`` through the field: ``out(x) = vol(x + phi(x))``.

    The field must be at volume resolution.  Intensity volumes interpolate
    trilinearly, label volumes nearest-neighbor; ``mode`` overrides the
    choice ("intensity" or "label").  A zero field reproduces the input
    exactly in both modes.
    """
    dims = vol.dims
    if field.counts != dims:
        raise ValueError(f"field resolution {field.counts} does not match "
                         f"volume dims {dims}")
    if mode is None:
        mode = "label" if vol.is_label else "intensity"
    if mode not in ("intensity", "label"):
        raise ValueError(f"unknown warp mode: {mode!r}")
    # x + phi in fractional index units: index i plus phi * n/2 per axis.
    fracs = np.empty(dims + (3,))
    for a in range(3):
        shape = [1, 1, 1]
        shape[a] = dims[a]
        base = np.arange(dims[a], dtype=np.float64).reshape(shape)
        fracs[..., a] = base + field.vectors[..., a] * (dims[a] / 2.0)
    if mode == "label":
        data = sample_points_nearest(vol.data, fracs)
    else:
        data = sample_points_linear(vol.data, fracs)
    return Volume3D(data, spacing=vol.spacing, is_label=(mode == "label"))


def diffusion_penalty(field: DisplacementField, weight: float) -> float:
    """Smoothness penalty: weighted sum over grid points of the squared
    spatial-gradient norms of all three components, gradients taken per
    normalized coordinate."""
    grad = spatial_gradient(field)
    return float(weight) * float(np.sum(grad * grad))


def nonlocal_label_loss(prob: ProbTensor6D, labels_moving: Volume3D,
                        labels_fixed: Volume3D, num_classes: int) -> float:
    """Probability-weighted label agreement.

    The moving segmentation's one-hot channels are trilinearly sampled at
    every displaced control position and averaged under the distribution;
    the squared difference to the fixed segmentation's one-hot channels,
    trilinearly sampled at the undisplaced control points, is averaged
    over points and classes.  Sampling both sides the same way makes the
    loss vanish for a perfectly aligned pair under a zero-displacement
    point mass, control-grid placement notwithstanding.
    """
    if not (labels_moving.is_label and labels_fixed.is_label):
        raise ValueError("label loss needs label volumes")
    num_classes = int(num_classes)
    top = max(int(labels_moving.data.max()), int(labels_fixed.data.max()))
    if top >= num_classes:
        raise ValueError(f"labels reach {top} but num_classes is {num_classes}")
    grid, space = prob.grid, prob.space
    ctrl = [grid.axis_coords(a) for a in range(3)]
    k1, k2, k3 = grid.counts
    s1, s2, s3 = space.steps
    p = prob.values

    # Displaced sample positions factorize per axis, in moving-volume
    # fractional index units.
    m_fracs = [normalized_to_index(np.add.outer(ctrl[a], space.axis_offsets(a)).ravel(),
                                   labels_moving.dims[a]) for a in range(3)]
    f_fracs = [normalized_to_index(np.asarray(ctrl[a]), labels_fixed.dims[a])
               for a in range(3)]

    loss = 0.0
    for cls in range(num_classes):
        onehot = (labels_moving.data == cls).astype(np.float64)
        sampled = sample_separable(onehot, m_fracs)
        sampled = sampled.reshape(k1, s1, k2, s2, k3, s3).transpose(0, 2, 4, 1, 3, 5)
        expect = np.sum(p * sampled, axis=(3, 4, 5))
        target = sample_separable((labels_fixed.data == cls).astype(np.float64),
                                  f_fracs)
        diff = expect - target
        loss += float(np.sum(diff * diff))
    return loss / (grid.num_points * num_classes)
