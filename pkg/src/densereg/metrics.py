"""Registration quality measures and the run report.

Dice overlap per label, Jacobian-determinant statistics of a full-resolution
field (computed on interior voxels in voxel units so values are comparable
across volume sizes), and a report container with deterministic text and
CSV serializations.  Stage runtimes are kept out of both serializations so
that two identical runs produce identical report bytes; they are written
separately.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import DisplacementField, Volume3D

__all__ = ["dice", "mean_dice", "jacobian_stats", "RegistrationReport"]


def dice(a: Volume3D, b: Volume3D, labels=None) -> dict:
    """Per-label Dice overlap: ``2 |A and B| / (|A| + |B|)``.

    ``labels`` defaults to every nonzero label present in either volume.
    A label absent from both volumes is undefined (NaN, excluded from the
    mean); absent from exactly one gives 0.
    """
    if not (a.is_label and b.is_label):
        raise ValueError("dice needs label volumes")
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
    if labels is None:
        present = set(np.unique(a.data)) | set(np.unique(b.data))
        labels = sorted(int(l) for l in present if l != 0)
    out = {}
    for lab in labels:
        in_a = a.data == lab
        in_b = b.data == lab
        na = int(np.count_nonzero(in_a))
        nb = int(np.count_nonzero(in_b))
        if na + nb == 0:
            out[int(lab)] = float("nan")
        else:
            inter = int(np.count_nonzero(in_a & in_b))
            out[int(lab)] = 2.0 * inter / (na + nb)
    return out


def mean_dice(scores: dict) -> float:
    """Mean over defined (non-NaN) per-label Dice values."""
    vals = [v for v in scores.values() if not np.isnan(v)]
    if not vals:
        return float("nan")
    return float(np.mean(vals))


def jacobian_stats(field: DisplacementField) -> tuple:
    """Population std of interior Jacobian determinants and the folding
    fraction (share of interior voxels with determinant <= 0).

    The deformation in voxel units is ``x_vox(i) = i + phi * n/2`` per
    axis; J is its derivative by central differences over the voxel index.
    Under the shared center-aligned convention a linear normalized field
    ``phi = a x`` yields ``det = (1 + a)^3`` (unit conversion factor 1).
    """
    counts = field.counts
    if any(c < 3 for c in counts):
        raise ValueError(f"need >= 3 voxels per axis for interior central "
                         f"differences, got {counts}")
    u = np.empty(field.vectors.shape)
    for c in range(3):
        u[..., c] = field.vectors[..., c] * (counts[c] / 2.0)
    inner = tuple(slice(1, -1) for _ in range(3))
    jac = np.empty(tuple(c - 2 for c in counts) + (3, 3))
    for c in range(3):
        comp = u[..., c]
        for a in range(3):
            hi = [slice(1, -1)] * 3
            lo = [slice(1, -1)] * 3
            hi[a] = slice(2, None)
            lo[a] = slice(0, -2)
            d = (comp[tuple(hi)] - comp[tuple(lo)]) / 2.0
            jac[..., c, a] = d + (1.0 if c == a else 0.0)
    dets = np.linalg.det(jac)
    std = float(dets.std())
    folding = float(np.count_nonzero(dets <= 0.0)) / dets.size
    return std, folding


@dataclass
class RegistrationReport:
    """Quality summary of one run.

    ``runtimes`` (stage name to seconds) is excluded from :meth:`to_text`
    and :meth:`to_csv` so identical runs serialize identically; use
    :meth:`timings_text` to record it separately.
    """

    per_label_dice: dict = dc_field(default_factory=dict)
    std_jac: float = float("nan")
    folding_fraction: float = float("nan")
    runtimes: dict = dc_field(default_factory=dict)
    notes: dict = dc_field(default_factory=dict)

    @property
    def mean_dice(self) -> float:
        return mean_dice(self.per_label_dice)

    @staticmethod
    def _fmt(v: float) -> str:
        return format(float(v), ".9g")

    def to_text(self) -> str:
        lines = []
        for lab in sorted(self.per_label_dice):
            lines.append(f"dice_label_{lab}={self._fmt(self.per_label_dice[lab])}")
        lines.append(f"dice_mean={self._fmt(self.mean_dice)}")
        lines.append(f"std_jac={self._fmt(self.std_jac)}")
        lines.append(f"folding_fraction={self._fmt(self.folding_fraction)}")
        lines.append("jacobian_units=voxel")
        lines.append("field_units=normalized")
        for key in sorted(self.notes):
            lines.append(f"{key}={self.notes[key]}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["label,dice"]
        for lab in sorted(self.per_label_dice):
            rows.append(f"{lab},{self._fmt(self.per_label_dice[lab])}")
        rows.append(f"mean,{self._fmt(self.mean_dice)}")
        rows.append(f"std_jac,{self._fmt(self.std_jac)}")
        rows.append(f"folding,{self._fmt(self.folding_fraction)}")
        return "\n".join(rows) + "\n"

    def timings_text(self) -> str:
        lines = [f"{stage}={self._fmt(sec)}" for stage, sec in self.runtimes.items()]
        return "\n".join(lines) + ("\n" if lines else "")
