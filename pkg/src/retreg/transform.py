"""Spatial transform models, estimation and image resampling.

Models map sensed-image coordinates (x, y) = (column, line) onto the
reference frame.  Translation, rigid and affine models are homogeneous
3x3 matrices; the quadratic model is a 2x6 coefficient matrix over the
monomials (x^2, xy, y^2, x, y, 1).  Estimation picks the model from the
number of correspondences: fewer than 3 is not registrable, 3 to 5 fit
an affine model, 6 or more the full quadratic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateGeometryError, InputError,
                     RegistrationNotPossibleError, ResampleFailureError)

KIND_TRANSLATION = "translation"
KIND_RIGID = "rigid"
KIND_AFFINE = "affine"
KIND_QUADRATIC = "quadratic"
LINEAR_KINDS = (KIND_TRANSLATION, KIND_RIGID, KIND_AFFINE)

INTERP_NEAREST = "nearest"
INTERP_BILINEAR = "bilinear"
INTERP_BICUBIC = "bicubic"
INTERPOLATIONS = (INTERP_NEAREST, INTERP_BILINEAR, INTERP_BICUBIC)

BICUBIC_A = -0.5
NEWTON_ITERATIONS = 20
NEWTON_TOLERANCE = 1e-3
NEWTON_MAX_STEP = 50.0
_MAX_CANVAS_PIXELS = 64_000_000


@dataclass
class Correspondence:
    """A matched point pair: src in the sensed image, dst in the reference."""

    src: tuple[float, float]
    dst: tuple[float, float]


@dataclass
class TransformModel:
    """A spatial mapping of one of the four supported kinds."""

    kind: str
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        coeff = np.asarray(self.coefficients, dtype=np.float64)
        if self.kind in LINEAR_KINDS:
            if coeff.shape != (3, 3):
                raise InputError(f"{self.kind} model needs a 3x3 matrix")
            if not np.allclose(coeff[2], [0.0, 0.0, 1.0], atol=1e-12):
                raise InputError("linear models must keep the bottom row (0, 0, 1)")
            if self.kind == KIND_TRANSLATION:
                if not np.allclose(coeff[:2, :2], np.eye(2), atol=1e-12):
                    raise InputError("translation model cannot scale or rotate")
            if self.kind == KIND_RIGID:
                block = coeff[:2, :2]
                gram = block.T @ block
                if not (math.isclose(gram[0, 0], gram[1, 1], rel_tol=1e-9, abs_tol=1e-9)
                        and abs(gram[0, 1]) <= 1e-9 * max(1.0, gram[0, 0])):
                    raise InputError("rigid model block must be a scaled rotation")
        elif self.kind == KIND_QUADRATIC:
            if coeff.shape != (2, 6):
                raise InputError("quadratic model needs a 2x6 coefficient matrix")
        else:
            raise InputError(f"unknown transform kind {self.kind!r}")
        self.coefficients = coeff

    @staticmethod
    def translation(tx: float, ty: float) -> "TransformModel":
        m = np.eye(3)
        m[0, 2], m[1, 2] = tx, ty
        return TransformModel(KIND_TRANSLATION, m)

    @staticmethod
    def rigid(angle_deg: float, scale: float = 1.0,
              tx: float = 0.0, ty: float = 0.0) -> "TransformModel":
        """Scaled rotation by ``angle_deg`` (counter-clockwise on screen
        axes with lines growing downward) followed by a translation."""
        rad = math.radians(angle_deg)
        c, s = math.cos(rad), math.sin(rad)
        m = np.array([[scale * c, scale * s, tx],
                      [-scale * s, scale * c, ty],
                      [0.0, 0.0, 1.0]])
        return TransformModel(KIND_RIGID, m)

    @staticmethod
    def affine(matrix) -> "TransformModel":
        return TransformModel(KIND_AFFINE, np.asarray(matrix, dtype=np.float64))

    @staticmethod
    def quadratic(coefficients) -> "TransformModel":
        return TransformModel(KIND_QUADRATIC, np.asarray(coefficients, dtype=np.float64))


def _monomials(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=-1)


def apply(model: TransformModel, points) -> np.ndarray:
    """Map one (x, y) point or an (n, 2) array through the model."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 2:
        raise InputError("points must be (x, y) pairs")
    x, y = pts[:, 0], pts[:, 1]
    if model.kind in LINEAR_KINDS:
        m = model.coefficients
        out = np.stack([m[0, 0] * x + m[0, 1] * y + m[0, 2],
                        m[1, 0] * x + m[1, 1] * y + m[1, 2]], axis=1)
    else:
        out = _monomials(x, y) @ model.coefficients.T
    return out[0] if single else out


def jacobian(model: TransformModel, points) -> np.ndarray:
    """Local 2x2 derivative of the mapping at each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    single = np.asarray(points).ndim == 1
    if model.kind in LINEAR_KINDS:
        block = np.broadcast_to(model.coefficients[:2, :2], (pts.shape[0], 2, 2)).copy()
    else:
        c = model.coefficients
        x, y = pts[:, 0], pts[:, 1]
        block = np.empty((pts.shape[0], 2, 2))
        for row in range(2):
            block[:, row, 0] = 2.0 * c[row, 0] * x + c[row, 1] * y + c[row, 3]
            block[:, row, 1] = c[row, 1] * x + 2.0 * c[row, 2] * y + c[row, 4]
    return block[0] if single else block


def _split_correspondences(correspondences):
    src = np.array([c.src for c in correspondences], dtype=np.float64)
    dst = np.array([c.dst for c in correspondences], dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2:
        raise InputError("correspondences must carry (x, y) pairs")
    return src, dst


def _normalization(points: np.ndarray) -> np.ndarray:
    """Similarity matrix moving the centroid to 0 with RMS radius sqrt(2)."""
    centroid = points.mean(axis=0)
    rms = np.sqrt(((points - centroid) ** 2).sum(axis=1).mean())
    scale = math.sqrt(2.0) / rms if rms > 0.0 else 1.0
    return np.array([[scale, 0.0, -scale * centroid[0]],
                     [0.0, scale, -scale * centroid[1]],
                     [0.0, 0.0, 1.0]])


def _apply_h(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ T[:2, :2].T + T[:2, 2]


def estimate_translation(correspondences) -> tuple[TransformModel, np.ndarray]:
    """Mean-displacement translation fit."""
    src, dst = _split_correspondences(correspondences)
    delta = (dst - src).mean(axis=0)
    model = TransformModel.translation(delta[0], delta[1])
    residuals = np.linalg.norm(apply(model, src) - dst, axis=1)
    return model, residuals


def estimate_rigid(correspondences) -> tuple[TransformModel, np.ndarray]:
    """Least-squares scaled rotation plus translation (Umeyama)."""
    src, dst = _split_correspondences(correspondences)
    if len(src) < 2:
        raise RegistrationNotPossibleError("rigid fit needs at least 2 points")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cs, cd = src - mu_s, dst - mu_d
    var_s = (cs ** 2).sum() / len(src)
    if var_s <= 0.0:
        raise DegenerateGeometryError("source points are coincident")
    cov = cd.T @ cs / len(src)
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    sign = np.diag([1.0, d])
    rotation = u @ sign @ vt
    scale = (s * np.diag(sign)).sum() / var_s
    t = mu_d - scale * rotation @ mu_s
    m = np.eye(3)
    m[:2, :2] = scale * rotation
    m[:2, 2] = t
    model = TransformModel(KIND_RIGID, m)
    residuals = np.linalg.norm(apply(model, src) - dst, axis=1)
    return model, residuals


def _estimate_affine(src: np.ndarray, dst: np.ndarray) -> TransformModel:
    t_in = _normalization(src)
    t_out = _normalization(dst)
    sn = _apply_h(t_in, src)
    dn = _apply_h(t_out, dst)
    design = np.hstack([sn, np.ones((len(sn), 1))])
    if np.linalg.matrix_rank(design) < 3:
        raise DegenerateGeometryError("affine fit needs non-collinear points")
    params, *_ = np.linalg.lstsq(design, dn, rcond=None)
    a_norm = np.eye(3)
    a_norm[:2, :] = params.T
    matrix = np.linalg.inv(t_out) @ a_norm @ t_in
    matrix[2] = [0.0, 0.0, 1.0]
    return TransformModel(KIND_AFFINE, matrix)


def _quadratic_substitution(a: float, b: float, c: float) -> np.ndarray:
    """Matrix expressing monomials of (u, v) = (a x + b, a y + c) in
    terms of monomials of (x, y)."""
    return np.array([
        [a * a, 0.0, 0.0, 2.0 * a * b, 0.0, b * b],
        [0.0, a * a, 0.0, a * c, a * b, b * c],
        [0.0, 0.0, a * a, 0.0, 2.0 * a * c, c * c],
        [0.0, 0.0, 0.0, a, 0.0, b],
        [0.0, 0.0, 0.0, 0.0, a, c],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ])


def _estimate_quadratic(src: np.ndarray, dst: np.ndarray) -> TransformModel:
    t_in = _normalization(src)
    t_out = _normalization(dst)
    sn = _apply_h(t_in, src)
    dn = _apply_h(t_out, dst)
    design = _monomials(sn[:, 0], sn[:, 1])
    if np.linalg.matrix_rank(design) < 6:
        raise DegenerateGeometryError("quadratic fit needs 6 points in general position")
    params, *_ = np.linalg.lstsq(design, dn, rcond=None)
    c_norm = params.T  # (2, 6) in normalized coordinates
    # Recompose to pixel coordinates: substitute the input normalization
    # into the monomials and undo the output normalization.
    a = t_in[0, 0]
    sub = _quadratic_substitution(a, t_in[0, 2], t_in[1, 2])
    s_out = t_out[0, 0]
    coeff = (c_norm @ sub) / s_out
    coeff[0, 5] += -t_out[0, 2] / s_out
    coeff[1, 5] += -t_out[1, 2] / s_out
    return TransformModel(KIND_QUADRATIC, coeff)


def estimate(correspondences) -> tuple[TransformModel, np.ndarray]:
    """Fit the transform the correspondence count supports.

    Returns the model together with the per-correspondence residual
    lengths.  Fewer than 3 correspondences cannot be registered; 3 to 5
    produce an affine fit, 6 or more the quadratic fit.
    """
    if len(correspondences) < 3:
        raise RegistrationNotPossibleError(
            f"registration needs at least 3 correspondences, got {len(correspondences)}")
    src, dst = _split_correspondences(correspondences)
    if len(correspondences) < 6:
        model = _estimate_affine(src, dst)
    else:
        model = _estimate_quadratic(src, dst)
    residuals = np.linalg.norm(apply(model, src) - dst, axis=1)
    return model, residuals


@dataclass
class CanvasInfo:
    """Geometry of the resampled output canvas.

    ``ref_offset`` is the (x, y) position of the reference image origin
    inside the canvas.
    """

    rows: int
    cols: int
    ref_offset: tuple[int, int]


def _invert_linear(model: TransformModel) -> np.ndarray:
    try:
        inverse = np.linalg.inv(model.coefficients)
    except np.linalg.LinAlgError as exc:
        raise ResampleFailureError("transform matrix is singular") from exc
    if not np.isfinite(inverse).all():
        raise ResampleFailureError("transform matrix is singular")
    return inverse


def _invert_quadratic(model: TransformModel, tx: np.ndarray, ty: np.ndarray):
    """Newton inversion of the quadratic map at every target point.

    Starts from the inverse of the model's affine part and runs a damped
    Newton iteration; points that do not converge are flagged invalid.
    """
    c = model.coefficients
    affine = np.array([[c[0, 3], c[0, 4], c[0, 5]],
                       [c[1, 3], c[1, 4], c[1, 5]],
                       [0.0, 0.0, 1.0]])
    try:
        init = np.linalg.inv(affine)
    except np.linalg.LinAlgError as exc:
        raise ResampleFailureError("quadratic model has a singular affine part") from exc
    x = init[0, 0] * tx + init[0, 1] * ty + init[0, 2]
    y = init[1, 0] * tx + init[1, 1] * ty + init[1, 2]
    fx = fy = None
    for _ in range(NEWTON_ITERATIONS):
        fx = (c[0, 0] * x * x + c[0, 1] * x * y + c[0, 2] * y * y
              + c[0, 3] * x + c[0, 4] * y + c[0, 5]) - tx
        fy = (c[1, 0] * x * x + c[1, 1] * x * y + c[1, 2] * y * y
              + c[1, 3] * x + c[1, 4] * y + c[1, 5]) - ty
        j00 = 2.0 * c[0, 0] * x + c[0, 1] * y + c[0, 3]
        j01 = c[0, 1] * x + 2.0 * c[0, 2] * y + c[0, 4]
        j10 = 2.0 * c[1, 0] * x + c[1, 1] * y + c[1, 3]
        j11 = c[1, 1] * x + 2.0 * c[1, 2] * y + c[1, 4]
        det = j00 * j11 - j01 * j10
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = (j11 * fx - j01 * fy) / det
            dy = (-j10 * fx + j00 * fy) / det
        step = np.hypot(dx, dy)
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(step > NEWTON_MAX_STEP, NEWTON_MAX_STEP / step, 1.0)
        bad = ~np.isfinite(dx) | ~np.isfinite(dy)
        dx = np.where(bad, 0.0, dx * shrink)
        dy = np.where(bad, 0.0, dy * shrink)
        x = x - dx
        y = y - dy
    fx = (c[0, 0] * x * x + c[0, 1] * x * y + c[0, 2] * y * y
          + c[0, 3] * x + c[0, 4] * y + c[0, 5]) - tx
    fy = (c[1, 0] * x * x + c[1, 1] * x * y + c[1, 2] * y * y
          + c[1, 3] * x + c[1, 4] * y + c[1, 5]) - ty
    with np.errstate(invalid="ignore"):
        converged = np.hypot(fx, fy) <= NEWTON_TOLERANCE
    converged &= np.isfinite(x) & np.isfinite(y)
    return x, y, converged


def _cubic_weight(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    a = BICUBIC_A
    near = (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0
    far = a * t ** 3 - 5.0 * a * t ** 2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _sample_channel(channel: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                    valid: np.ndarray, interpolation: str) -> np.ndarray:
    rows, cols = channel.shape
    data = channel.astype(np.float64)
    xsv = np.where(valid, xs, 0.0)
    ysv = np.where(valid, ys, 0.0)
    if interpolation == INTERP_NEAREST:
        ix = np.clip(np.floor(xsv + 0.5).astype(np.int64), 0, cols - 1)
        iy = np.clip(np.floor(ysv + 0.5).astype(np.int64), 0, rows - 1)
        out = data[iy, ix]
    elif interpolation == INTERP_BILINEAR:
        x0 = np.clip(np.floor(xsv).astype(np.int64), 0, max(cols - 2, 0))
        y0 = np.clip(np.floor(ysv).astype(np.int64), 0, max(rows - 2, 0))
        x1 = np.minimum(x0 + 1, cols - 1)
        y1 = np.minimum(y0 + 1, rows - 1)
        fx = np.clip(xsv - x0, 0.0, 1.0)
        fy = np.clip(ysv - y0, 0.0, 1.0)
        top = (1.0 - fx) * data[y0, x0] + fx * data[y0, x1]
        bottom = (1.0 - fx) * data[y1, x0] + fx * data[y1, x1]
        out = (1.0 - fy) * top + fy * bottom
    elif interpolation == INTERP_BICUBIC:
        x0 = np.floor(xsv).astype(np.int64)
        y0 = np.floor(ysv).astype(np.int64)
        out = np.zeros_like(xsv)
        weight_sum = np.zeros_like(xsv)
        for dy in range(-1, 3):
            wy = _cubic_weight(ysv - (y0 + dy))
            iy = np.clip(y0 + dy, 0, rows - 1)
            for dx in range(-1, 3):
                wx = _cubic_weight(xsv - (x0 + dx))
                ix = np.clip(x0 + dx, 0, cols - 1)
                w = wx * wy
                out += w * data[iy, ix]
                weight_sum += w
        # The kernel weights sum to 1 up to rounding; renormalize to keep
        # flat areas exactly flat.
        out = np.where(weight_sum > 0.0, out / np.where(weight_sum == 0.0, 1.0, weight_sum), 0.0)
    else:
        raise InputError(f"unknown interpolation {interpolation!r}")
    out = np.clip(out, 0.0, 255.0)
    return np.where(valid, np.floor(out + 0.5), 0.0).astype(np.uint8)


def resample(image: np.ndarray, model: TransformModel,
             interpolation: str = INTERP_BILINEAR,
             ref_dims: tuple[int, int] | None = None):
    """Resample the sensed image into the reference frame.

    The canvas is the union bounding box of the reference frame and the
    forward-mapped sensed corners.  Every canvas pixel is inverse-mapped
    into the sensed image and sampled there; pixels mapping outside the
    sensed bounds (or where the inversion diverges) are invalid and 0.

    Returns ``(canvas, valid, info)``.
    """
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim not in (2, 3):
        raise InputError("expected an 8-bit raster with 2 or 3 dimensions")
    if interpolation not in INTERPOLATIONS:
        raise InputError(f"unknown interpolation {interpolation!r}")
    rows_s, cols_s = arr.shape[:2]
    ref_rows, ref_cols = ref_dims if ref_dims is not None else (rows_s, cols_s)
    corners = np.array([[0.0, 0.0], [cols_s - 1.0, 0.0],
                        [cols_s - 1.0, rows_s - 1.0], [0.0, rows_s - 1.0]])
    mapped = apply(model, corners)
    if not np.isfinite(mapped).all():
        raise ResampleFailureError("model maps the image corners to infinity")
    x_min = int(math.floor(min(0.0, mapped[:, 0].min())))
    y_min = int(math.floor(min(0.0, mapped[:, 1].min())))
    x_max = int(math.ceil(max(float(ref_cols - 1), mapped[:, 0].max())))
    y_max = int(math.ceil(max(float(ref_rows - 1), mapped[:, 1].max())))
    canvas_rows = y_max - y_min + 1
    canvas_cols = x_max - x_min + 1
    if canvas_rows * canvas_cols > _MAX_CANVAS_PIXELS:
        raise ResampleFailureError("output canvas would be unreasonably large")
    offset = (-x_min, -y_min)

    xs_ref, ys_ref = np.meshgrid(np.arange(canvas_cols, dtype=np.float64) + x_min,
                                 np.arange(canvas_rows, dtype=np.float64) + y_min)
    if model.kind in LINEAR_KINDS:
        inv = _invert_linear(model)
        xs = inv[0, 0] * xs_ref + inv[0, 1] * ys_ref + inv[0, 2]
        ys = inv[1, 0] * xs_ref + inv[1, 1] * ys_ref + inv[1, 2]
        converged = np.ones(xs.shape, dtype=bool)
    else:
        xs, ys, converged = _invert_quadratic(model, xs_ref, ys_ref)
    with np.errstate(invalid="ignore"):
        valid = (converged & np.isfinite(xs) & np.isfinite(ys)
                 & (xs >= 0.0) & (xs <= cols_s - 1.0)
                 & (ys >= 0.0) & (ys <= rows_s - 1.0))
    if not valid.any():
        raise ResampleFailureError("no canvas pixel maps into the sensed image")
    if arr.ndim == 2:
        canvas = _sample_channel(arr, xs, ys, valid, interpolation)
    else:
        canvas = np.stack([_sample_channel(arr[:, :, ch], xs, ys, valid, interpolation)
                           for ch in range(arr.shape[2])], axis=2)
    info = CanvasInfo(rows=canvas_rows, cols=canvas_cols, ref_offset=offset)
    return canvas, valid, info
