"""Real spherical harmonics in the 3DGS sign convention, up to degree 3.

Coefficient arrays are laid out as ``(..., (L+1)**2, 3)``: one column per
colour channel. Rendered colour is ``eval_sh(sh, d) + 0.5``.
"""

import numpy as np

MAX_DEGREE = 3

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def num_coeffs(degree):
    return (degree + 1) ** 2


def degree_from_coeffs(k):
    degree = int(round(np.sqrt(k))) - 1
    if degree < 0 or num_coeffs(degree) != k:
        raise ValueError(f"{k} is not a valid SH coefficient count")
    return degree


def _check_degree(degree):
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported SH degree {degree}; expected 0..{MAX_DEGREE}")


def sh_basis(dirs, degree):
    """Evaluate the basis functions at unit directions.

    Returns an array of shape ``(..., (degree+1)**2)``.
    """
    _check_degree(degree)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (num_coeffs(degree),))
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh(sh, dirs):
    """Evaluate coefficients ``(..., K, 3)`` along matching unit ``dirs`` ``(..., 3)``."""
    sh = np.asarray(sh, dtype=np.float64)
    basis = sh_basis(dirs, degree_from_coeffs(sh.shape[-2]))
    return np.einsum("...k,...kc->...c", basis, sh)


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1
    )


_SAMPLE_DIRS = _fibonacci_sphere(64)


def band_rotation_matrices(R, degree):
    """Per-band matrices ``M_l`` with ``Y_l(d) @ M_l == Y_l(R.T @ d)`` for all unit d.

    Each band spans a rotation-invariant subspace, so the least-squares fit
    over a fixed well-spread direction set is exact to rounding.
    """
    _check_degree(degree)
    R = np.asarray(R, dtype=np.float64)
    basis = sh_basis(_SAMPLE_DIRS, degree)
    rotated = sh_basis(_SAMPLE_DIRS @ R, degree)  # rows are R.T @ d
    mats = []
    for band in range(degree + 1):
        sl = slice(band * band, (band + 1) ** 2)
        m, *_ = np.linalg.lstsq(basis[:, sl], rotated[:, sl], rcond=None)
        mats.append(m)
    return mats


def sh_rotate(sh, R, degree=None):
    """Rotate SH coefficients so that ``eval(out, d) == eval(sh, R.T @ d)``."""
    sh = np.asarray(sh, dtype=np.float64)
    if degree is None:
        degree = degree_from_coeffs(sh.shape[-2])
    _check_degree(degree)
    if sh.shape[-2] != num_coeffs(degree):
        raise ValueError(
            f"coefficient count {sh.shape[-2]} does not match degree {degree}"
        )
    out = sh.copy()
    if degree == 0:
        return out
    for band, m in enumerate(band_rotation_matrices(R, degree)):
        if band == 0:
            continue
        sl = slice(band * band, (band + 1) ** 2)
        # c'_l = M_l c_l per channel
        out[..., sl, :] = np.einsum("ij,...jc->...ic", m, sh[..., sl, :])
    return out
