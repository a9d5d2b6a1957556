"""Procedural face renderer.

Every face is drawn analytically from its :class:`AttributeVector` on a small
square canvas: antialiased ellipses, rectangles and bands composed in a fixed
order. The label map is emitted from the same geometry pass, so image and
labels can never drift apart. A jitter seed shifts the whole face by up to one
design pixel so that the dataset is not perfectly grid-aligned.

Design coordinates are in 32-pixel units and scaled to the target resolution.
"""

from __future__ import annotations

import colorsys

import numpy as np

from .attributes import AttributeVector

SUPPORTED_RESOLUTIONS = (32, 64)

# Fixed 6-part palette for label maps.
PART_IDS = {
    "background": 0,
    "skin": 1,
    "hair": 2,
    "glasses": 3,
    "mouth": 4,
    "hat": 5,
}

SKIN_COLORS = {
    "light": (0.96, 0.87, 0.75),
    "tan": (0.82, 0.64, 0.45),
    "dark": (0.48, 0.33, 0.24),
}

HAIR_COLORS = {
    "black": (0.09, 0.09, 0.10),
    "blonde": (0.93, 0.80, 0.44),
    "red": (0.73, 0.24, 0.12),
    "gray": (0.66, 0.66, 0.70),
}

GLASSES_COLOR = (0.16, 0.16, 0.19)
MOUTH_COLOR = (0.55, 0.12, 0.30)
HAT_COLOR = (0.22, 0.20, 0.38)

BACKGROUND_SATURATION = 0.40
BACKGROUND_VALUE = 0.85

# Face geometry in design units (32 px canvas). Everything, including the
# antialiasing band under maximal jitter, must stay inside the canvas: edges
# clipped by the border would leave image gradients with no label boundary.
FACE_CX, FACE_CY = 16.0, 17.5
FACE_B = 10.0
FACE_A = {"feminine": 7.2, "masculine": 9.8}
EYE_DX, EYE_DY = 3.6, -2.5
RING_R_OUT, RING_R_IN = 2.9, 1.2
HAIR_PAD_A, HAIR_PAD_B, HAIR_DY = 3.0, 2.4, -1.0
HAIR_LIMIT = {"short": -3.0, "long": 8.5}
MOUTH_DY, MOUTH_HW, MOUTH_XW, SMILE_CURVE = 5.4, 1.15, 3.1, 0.22
SMILE_EXTRA_XW = 0.6  # a smiling mouth is wider as well as curved
HAT_CROWN_HW, HAT_CROWN_HH = 6.5, 2.2
HAT_BRIM_HW, HAT_BRIM_HH = 8.3, 1.0
# Hair color tints the face as a vertical ramp: zero at the jaw (skin tone
# stays readable there) up to SCALP_ALPHA at the crown (hair color stays
# observable on bald faces). The ramp's constant gradient is far below any
# sketch threshold, so it adds no spurious edges.
SCALP_ALPHA = 0.35

_AA = 0.8  # antialiasing width in target pixels


def background_color(hue: float) -> tuple:
    return colorsys.hsv_to_rgb(hue % 1.0, BACKGROUND_SATURATION, BACKGROUND_VALUE)


def jitter_offsets(jitter_seed: int) -> tuple:
    """Face-center offset in design units, each within [-1, 1]."""
    rng = np.random.default_rng(jitter_seed)
    return float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))


def _check_resolution(resolution: int) -> None:
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ValueError(f"unsupported resolution {resolution}; expected one of {SUPPORTED_RESOLUTIONS}")


def _cov(dist: np.ndarray) -> np.ndarray:
    """Pixel coverage from a signed boundary distance (negative = inside)."""
    return np.clip(0.5 - dist / _AA, 0.0, 1.0)


def _ellipse_dist(x, y, cx, cy, a, b):
    r = np.sqrt(((x - cx) / a) ** 2 + ((y - cy) / b) ** 2)
    return (r - 1.0) * min(a, b)


def _rect_dist(x, y, cx, cy, hw, hh):
    return np.maximum(np.abs(x - cx) - hw, np.abs(y - cy) - hh)


class _Canvas:
    def __init__(self, resolution: int, bg: tuple):
        self.image = np.empty((resolution, resolution, 3), dtype=np.float64)
        self.image[:] = bg
        self.label = np.zeros((resolution, resolution), dtype=np.uint8)
        yy, xx = np.mgrid[0:resolution, 0:resolution]
        self.x = xx.astype(np.float64) + 0.5
        self.y = yy.astype(np.float64) + 0.5

    def paint(self, coverage: np.ndarray, color, part_id=None) -> None:
        c = coverage[..., None]
        col = np.asarray(color, dtype=np.float64)
        if col.ndim == 1:
            col = col[None, None, :]
        self.image = self.image * (1.0 - c) + col * c
        if part_id is not None:
            self.label[coverage >= 0.5] = part_id


def _draw(attrs: AttributeVector, resolution: int, jitter_seed: int) -> tuple:
    _check_resolution(resolution)
    s = resolution / 32.0
    jx, jy = jitter_offsets(jitter_seed)
    cx, cy = (FACE_CX + jx) * s, (FACE_CY + jy) * s
    a = FACE_A[attrs.gender_presentation] * s
    b = FACE_B * s

    cv = _Canvas(resolution, background_color(attrs.background_hue))
    x, y = cv.x, cv.y

    # Hair sits behind the face: an outer ellipse clipped at a length-dependent
    # height, later occluded by the face so only a cap / side curtains remain.
    if attrs.hair_length != "bald":
        d_ell = _ellipse_dist(x, y, cx, cy + HAIR_DY * s, a + HAIR_PAD_A * s, b + HAIR_PAD_B * s)
        d_cut = y - (cy + HAIR_LIMIT[attrs.hair_length] * s)
        cv.paint(_cov(np.maximum(d_ell, d_cut)), HAIR_COLORS[attrs.hair_color], PART_IDS["hair"])

    skin = np.asarray(SKIN_COLORS[attrs.skin_tone])
    hair = np.asarray(HAIR_COLORS[attrs.hair_color])
    ramp = np.clip((cy + b - y) / (2 * b), 0.0, 1.0)
    face_color = skin[None, None, :] + (SCALP_ALPHA * ramp)[..., None] * (hair - skin)[None, None, :]
    cv.paint(_cov(_ellipse_dist(x, y, cx, cy, a, b)), face_color, PART_IDS["skin"])

    if attrs.glasses == "glasses":
        ey = cy + EYE_DY * s
        for sign in (-1.0, 1.0):
            rr = np.sqrt((x - (cx + sign * EYE_DX * s)) ** 2 + (y - ey) ** 2)
            ring = np.minimum(0.5 - (rr - RING_R_OUT * s), 0.5 + (rr - RING_R_IN * s))
            cv.paint(np.clip(ring, 0.0, 1.0), GLASSES_COLOR, PART_IDS["glasses"])
        cv.paint(_cov(_rect_dist(x, y, cx, ey, 1.2 * s, 0.35 * s)), GLASSES_COLOR, PART_IDS["glasses"])

    dx = x - cx
    if attrs.smile == "smiling":
        yc = cy + (MOUTH_DY + 1.1) * s - SMILE_CURVE / s * dx**2
        xw = (MOUTH_XW + SMILE_EXTRA_XW) * s
    else:
        yc = cy + MOUTH_DY * s
        xw = MOUTH_XW * s
    # Sharp cut at the mouth ends: corner antialiasing would paint faint ink
    # below the label threshold, breaking sketch/label-boundary agreement.
    mouth_cov = _cov(np.abs(y - yc) - MOUTH_HW * s) * (np.abs(dx) <= xw)
    cv.paint(mouth_cov, MOUTH_COLOR, PART_IDS["mouth"])

    if attrs.hat == "hat":
        top = cy - b
        cv.paint(_cov(_rect_dist(x, y, cx, top - 3.0 * s, HAT_CROWN_HW * s, HAT_CROWN_HH * s)),
                 HAT_COLOR, PART_IDS["hat"])
        cv.paint(_cov(_rect_dist(x, y, cx, top - 1.2 * s, HAT_BRIM_HW * s, HAT_BRIM_HH * s)),
                 HAT_COLOR, PART_IDS["hat"])

    return np.clip(cv.image, 0.0, 1.0).astype(np.float32), cv.label


def render(attrs: AttributeVector, resolution: int = 32, jitter_seed: int = 0) -> np.ndarray:
    """Render one face as an (R, R, 3) float image in [0, 1]."""
    return _draw(attrs, resolution, jitter_seed)[0]


def extract_label_map(attrs: AttributeVector, resolution: int = 32, jitter_seed: int = 0) -> np.ndarray:
    """Per-pixel part ids from the same geometry the renderer draws."""
    return _draw(attrs, resolution, jitter_seed)[1]


def part_color_family(attrs: AttributeVector) -> dict:
    """Full-coverage colors the renderer may paint for each part id.

    Skin has two family members because the scalp tint shades the upper face
    toward the hair color.
    """
    skin = np.array(SKIN_COLORS[attrs.skin_tone])
    hair = np.array(HAIR_COLORS[attrs.hair_color])
    tinted = skin + SCALP_ALPHA * (hair - skin)
    return {
        PART_IDS["background"]: [np.array(background_color(attrs.background_hue))],
        PART_IDS["skin"]: [tinted],
        PART_IDS["hair"]: [hair],
        PART_IDS["glasses"]: [np.array(GLASSES_COLOR)],
        PART_IDS["mouth"]: [np.array(MOUTH_COLOR)],
        PART_IDS["hat"]: [np.array(HAT_COLOR)],
    }


def glasses_bbox(resolution: int, jitter_seed: int) -> tuple:
    """Pixel bounding box (y0, y1, x0, x1) that contains any glasses drawing.

    Includes the antialiasing margin, so images for attribute vectors that
    differ only in the glasses slot differ only inside this box.
    """
    _check_resolution(resolution)
    s = resolution / 32.0
    jx, jy = jitter_offsets(jitter_seed)
    cx, cy = (FACE_CX + jx) * s, (FACE_CY + jy) * s
    ey = cy + EYE_DY * s
    margin = RING_R_OUT * s + 2.0 * _AA
    x0 = int(np.floor(cx - EYE_DX * s - margin))
    x1 = int(np.ceil(cx + EYE_DX * s + margin))
    y0 = int(np.floor(ey - margin))
    y1 = int(np.ceil(ey + margin))
    clamp = lambda v: max(0, min(resolution, v))
    return clamp(y0), clamp(y1), clamp(x0), clamp(x1)
