"""Independent brute-force reference implementations.

Everything here is written as plain loops from the mathematical definition,
deliberately ignoring how the library computes the same quantity, so tests
can compare the two routes.  Slow on purpose; use tiny inputs.
"""

import math

import numpy as np


def naive_trilinear(data, point_norm):
    """Trilinear interpolation at one normalized point, clamped borders.

    Direct 8-corner evaluation from the textbook formula.
    """
    dims = data.shape
    fracs = []
    for a in range(3):
        t = (point_norm[a] + 1.0) * (dims[a] / 2.0) - 0.5
        fracs.append(min(max(t, 0.0), dims[a] - 1.0))
    i0 = [min(int(math.floor(t)), dims[a] - 2) if dims[a] > 1 else 0
          for a, t in enumerate(fracs)]
    w = [fracs[a] - i0[a] if dims[a] > 1 else 0.0 for a in range(3)]
    val = 0.0
    for b0 in (0, 1):
        for b1 in (0, 1):
            for b2 in (0, 1):
                c = data[min(i0[0] + b0, dims[0] - 1),
                         min(i0[1] + b1, dims[1] - 1),
                         min(i0[2] + b2, dims[2] - 1)]
                weight = ((w[0] if b0 else 1 - w[0])
                          * (w[1] if b1 else 1 - w[1])
                          * (w[2] if b2 else 1 - w[2]))
                val += float(c) * weight
    return val


def naive_gradient(vectors, spacings):
    """Per-component spatial gradient by explicit stencils.

    Central differences in the interior, one-sided first-order at borders,
    per normalized coordinate (divide by the grid spacing).
    """
    g1, g2, g3 = vectors.shape[:3]
    out = np.zeros((g1, g2, g3, 3, 3))
    for c in range(3):
        f = vectors[..., c]
        for a in range(3):
            n = vectors.shape[a]
            h = spacings[a]
            for idx in np.ndindex(g1, g2, g3):
                i = idx[a]
                lo = list(idx)
                hi = list(idx)
                if i == 0:
                    hi[a] = 1
                    d = (f[tuple(hi)] - f[tuple(idx)]) / h
                elif i == n - 1:
                    lo[a] = n - 2
                    d = (f[tuple(idx)] - f[tuple(lo)]) / h
                else:
                    lo[a] = i - 1
                    hi[a] = i + 1
                    d = (f[tuple(hi)] - f[tuple(lo)]) / (2.0 * h)
                out[idx + (c, a)] = d
    return out


def clamped_shift(data, offset):
    """Integer shift with border replication: out[v] = data[clip(v + offset)]."""
    out = np.empty_like(data)
    dims = data.shape
    for idx in np.ndindex(*dims):
        src = tuple(min(max(idx[a] + offset[a], 0), dims[a] - 1) for a in range(3))
        out[idx] = data[src]
    return out


def naive_box_mean(data, radius):
    """Mean filter with window (2r+1)^3 and border replication, plain loops."""
    dims = data.shape
    out = np.zeros_like(data, dtype=np.float64)
    for idx in np.ndindex(*dims):
        acc = 0.0
        for d0 in range(-radius, radius + 1):
            for d1 in range(-radius, radius + 1):
                for d2 in range(-radius, radius + 1):
                    src = (min(max(idx[0] + d0, 0), dims[0] - 1),
                           min(max(idx[1] + d1, 0), dims[1] - 1),
                           min(max(idx[2] + d2, 0), dims[2] - 1))
                    acc += data[src]
        out[idx] = acc / (2 * radius + 1) ** 3
    return out


def ssc_pairs():
    """The 12 unordered pairs of distinct 6-neighborhood offsets lying on
    different axes, in a fixed canonical order."""
    offs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    pairs = []
    for i in range(len(offs)):
        for j in range(i + 1, len(offs)):
            axis_i = [k for k, v in enumerate(offs[i]) if v != 0][0]
            axis_j = [k for k, v in enumerate(offs[j]) if v != 0][0]
            if axis_i != axis_j:
                pairs.append((offs[i], offs[j]))
    return pairs


def naive_ssc(data, patch_radius):
    """Self-similarity context channels at full resolution, by loops.

    For each of the 12 neighbor pairs (a, b): the mean squared patch
    distance between border-clamped shifted copies, box-averaged with
    replication; sigma^2 is the local mean of the 12 distances; channel is
    exp(-dist / sigma^2), defined as 1.0 where sigma^2 == 0.
    """
    pairs = ssc_pairs()
    dists = []
    for na, nb in pairs:
        a = clamped_shift(data, na)
        b = clamped_shift(data, nb)
        dists.append(naive_box_mean((a - b) ** 2, patch_radius))
    dists = np.stack(dists, axis=0)
    sigma2 = dists.mean(axis=0)
    out = np.ones_like(dists)
    nz = sigma2 > 0
    for c in range(len(pairs)):
        out[c][nz] = np.exp(-dists[c][nz] / sigma2[nz])
    return out


def gaussian_kernel_1d(sigma, truncate=4.0):
    radius = int(truncate * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def naive_gaussian_smooth(data, sigma, truncate=4.0):
    """Separable Gaussian smoothing with replicate borders, plain loops."""
    k = gaussian_kernel_1d(sigma, truncate)
    radius = (len(k) - 1) // 2
    out = data.astype(np.float64)
    for axis in range(3):
        src = out.copy()
        n = data.shape[axis]
        out = np.zeros_like(src)
        for idx in np.ndindex(*data.shape):
            acc = 0.0
            for o in range(-radius, radius + 1):
                j = list(idx)
                j[axis] = min(max(idx[axis] + o, 0), n - 1)
                acc += k[o + radius] * src[tuple(j)]
            out[idx] = acc
    return out


def naive_dissimilarity(feat_f, feat_m, origin_f, spacing_f, origin_m, spacing_m,
                        ctrl_coords, offsets):
    """Quadruple loop over (control point, displacement): mean squared
    feature difference, each channel sampled with naive_trilinear.

    feat_* have shape (C, G1, G2, G3); ctrl_coords is a list of three
    per-axis coordinate arrays; offsets likewise per axis.
    """
    c_count = feat_f.shape[0]
    k_shape = tuple(len(c) for c in ctrl_coords)
    s_shape = tuple(len(o) for o in offsets)
    out = np.zeros(k_shape + s_shape)
    for k0, x0 in enumerate(ctrl_coords[0]):
        for k1, x1 in enumerate(ctrl_coords[1]):
            for k2, x2 in enumerate(ctrl_coords[2]):
                for a, d0 in enumerate(offsets[0]):
                    for b, d1 in enumerate(offsets[1]):
                        for c, d2 in enumerate(offsets[2]):
                            acc = 0.0
                            for ch in range(c_count):
                                pf = [(x0 - origin_f[0]) / spacing_f[0],
                                      (x1 - origin_f[1]) / spacing_f[1],
                                      (x2 - origin_f[2]) / spacing_f[2]]
                                pm = [(x0 + d0 - origin_m[0]) / spacing_m[0],
                                      (x1 + d1 - origin_m[1]) / spacing_m[1],
                                      (x2 + d2 - origin_m[2]) / spacing_m[2]]
                                vf = naive_frac_trilinear(feat_f[ch], pf)
                                vm = naive_frac_trilinear(feat_m[ch], pm)
                                acc += (vf - vm) ** 2
                            out[(k0, k1, k2, a, b, c)] = acc / c_count
    return out


def naive_frac_trilinear(data, frac):
    """Trilinear interpolation at one fractional-index point, clamped."""
    dims = data.shape
    t = [min(max(frac[a], 0.0), dims[a] - 1.0) for a in range(3)]
    i0 = [min(int(math.floor(t[a])), dims[a] - 2) if dims[a] > 1 else 0 for a in range(3)]
    w = [t[a] - i0[a] if dims[a] > 1 else 0.0 for a in range(3)]
    val = 0.0
    for b0 in (0, 1):
        for b1 in (0, 1):
            for b2 in (0, 1):
                c = data[min(i0[0] + b0, dims[0] - 1),
                         min(i0[1] + b1, dims[1] - 1),
                         min(i0[2] + b2, dims[2] - 1)]
                weight = ((w[0] if b0 else 1 - w[0])
                          * (w[1] if b1 else 1 - w[1])
                          * (w[2] if b2 else 1 - w[2]))
                val += float(c) * weight
    return val


def naive_min_pool(data, kernel, axes):
    """Min pool with stride 1 and replicate padding over selected axes,
    one axis at a time (box window), plain loops."""
    out = np.asarray(data, dtype=np.float64).copy()
    r = (kernel - 1) // 2
    for axis in axes:
        n = out.shape[axis]
        if n == 1:
            continue
        src = out.copy()
        moved = np.moveaxis(src, axis, 0)
        dst = np.moveaxis(out, axis, 0)
        for i in range(n):
            lo = [min(max(i + o, 0), n - 1) for o in range(-r, r + 1)]
            dst[i] = np.min([moved[j] for j in lo], axis=0)
    return out


def naive_avg_pool(data, kernel, axes):
    """Average pool with stride 1 and replicate padding over selected axes."""
    out = np.asarray(data, dtype=np.float64).copy()
    r = (kernel - 1) // 2
    for axis in axes:
        n = out.shape[axis]
        if n == 1:
            continue
        src = out.copy()
        moved = np.moveaxis(src, axis, 0)
        dst = np.moveaxis(out, axis, 0)
        for i in range(n):
            lo = [min(max(i + o, 0), n - 1) for o in range(-r, r + 1)]
            dst[i] = np.sum([moved[j] for j in lo], axis=0) / kernel
    return out


def naive_lower_envelope(costs, curvature):
    """O(S^2) lower envelope of parabolas: out[i] = min_j c[j] + a (i-j)^2."""
    n = len(costs)
    out = np.empty(n)
    for i in range(n):
        out[i] = min(costs[j] + curvature * (i - j) ** 2 for j in range(n))
    return out


def naive_softmax_rows(cost6, temperature):
    """Row-wise softmax of negated costs over the displacement dims."""
    k1, k2, k3 = cost6.shape[:3]
    out = np.empty_like(cost6)
    for idx in np.ndindex(k1, k2, k3):
        row = -temperature * cost6[idx]
        row = row - row.max()
        e = np.exp(row)
        out[idx] = e / e.sum()
    return out


def naive_dice(a, b, label):
    na = int(np.count_nonzero(a == label))
    nb = int(np.count_nonzero(b == label))
    if na + nb == 0:
        return float("nan")
    inter = int(np.count_nonzero((a == label) & (b == label)))
    return 2.0 * inter / (na + nb)


def naive_jacobian(vectors):
    """Jacobian determinant per interior voxel, central differences.

    Displacements convert from normalized to voxel units (u_vox = phi * n/2
    per axis); derivatives are taken per voxel index.
    """
    dims = vectors.shape[:3]
    u = np.empty_like(vectors)
    for c in range(3):
        u[..., c] = vectors[..., c] * (dims[c] / 2.0)
    dets = []
    for i in range(1, dims[0] - 1):
        for j in range(1, dims[1] - 1):
            for k in range(1, dims[2] - 1):
                jmat = np.eye(3)
                for c in range(3):
                    jmat[c, 0] += (u[i + 1, j, k, c] - u[i - 1, j, k, c]) / 2.0
                    jmat[c, 1] += (u[i, j + 1, k, c] - u[i, j - 1, k, c]) / 2.0
                    jmat[c, 2] += (u[i, j, k + 1, c] - u[i, j, k - 1, c]) / 2.0
                dets.append(np.linalg.det(jmat))
    return np.array(dets)
