"""Parametric synthetic abdomen with analytic ground truth and a B-mode-like
slice renderer.

The aorta runs along y at a fixed depth below the skin plane z=0, with an
optional Gaussian fusiform aneurysm, an optional mural thrombus annulus,
and a bifurcation into two straight iliac tubes.  Rendering is a pure
function of (config, pose, frame_id): background speckle is seeded from
rng_seed XOR frame_id, so repeated calls are bit-identical.

Intensity bands (recorded constants, not clinical calibration):
  lumen (anechoic)        5..25   (< 30)
  thrombus (mid-echoic)  95..135  (90..140)
  vessel wall            190..250 (> 180)
  background speckle     40..170
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .kinematics import Pose, quat_rotate

FRAME_SIZE = 256
PIXEL_SPACING = 0.0005          # 0.5 mm/px
WALL_THICKNESS = 0.0015         # doubled where atheromatosis applies
CONTACT_TOL = 0.005             # render only within 5 mm of the surface
AAA_DIAMETER_THRESHOLD = 0.03   # clinical AAA convention

LUMEN_MAX = 30
THROMBUS_LO, THROMBUS_HI = 90, 140
WALL_MIN = 180

GRADES = ("none", "segmentary", "diffuse")


class PhantomError(Exception):
    pass


class NoContactError(PhantomError):
    """Probe too far off the body surface to image."""


class NotFrozenError(PhantomError):
    """Caliper measurements require a frozen frame."""


class InsufficientSweepError(PhantomError):
    """Too few frames, or frames cover too little of the aorta."""


@dataclass(frozen=True)
class Aneurysm:
    """Gaussian fusiform bulge of the aortic radius profile."""
    center_y: float
    peak_radius: float
    sigma: float


@dataclass(frozen=True)
class Thrombus:
    """Mural annulus occupying `fraction` of the lumen radius."""
    fraction: float
    extent_y: tuple[float, float]


@dataclass(frozen=True)
class PhantomConfig:
    aorta_depth: float = 0.04
    aorta_base_radius: float = 0.010
    aneurysm: Aneurysm | None = None
    thrombus: Thrombus | None = None
    bifurcation_y: float = -0.040
    iliac_radius: float = 0.006
    iliac_angle: float = 0.35
    atheromatosis_grade: str = "none"
    segmentary_extent_y: tuple[float, float] = (-0.02, 0.01)
    stiffness: float = 800.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.aorta_depth <= 0 or self.aorta_base_radius <= 0:
            raise ValueError("depth and radii must be positive")
        if self.iliac_radius <= 0:
            raise ValueError("iliac radius must be positive")
        if self.atheromatosis_grade not in GRADES:
            raise ValueError(f"grade must be one of {GRADES}")
        if self.aneurysm is not None:
            if self.aneurysm.peak_radius < self.aorta_base_radius:
                raise ValueError("aneurysm peak radius below base radius")
            if self.aneurysm.sigma <= 0:
                raise ValueError("aneurysm sigma must be positive")
        if self.thrombus is not None and not 0.0 <= self.thrombus.fraction < 1.0:
            raise ValueError("thrombus fraction must be in [0, 1)")


@dataclass(frozen=True)
class GroundTruth:
    has_aaa: bool
    max_ap_diameter: float
    max_ap_y: float
    has_thrombus: bool
    iliac_extension: bool
    iliac_ap_diameters: tuple[float, float]
    grade: str


@dataclass
class UsFrame:
    width: int
    height: int
    pixel_spacing: float
    intensities: np.ndarray      # (height, width) uint8, row-major
    pose: Pose
    frame_id: int
    frozen: bool = False

    def __post_init__(self):
        if self.intensities.shape != (self.height, self.width):
            raise ValueError("intensity buffer does not match frame size")
        if self.pixel_spacing <= 0:
            raise ValueError("pixel_spacing must be positive")

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode()
        return header + self.intensities.astype(np.uint8).tobytes()


def radius_profile(cfg: PhantomConfig, y) -> float | np.ndarray:
    """Outer lumen radius of the aorta at craniocaudal station y."""
    y = np.asarray(y, dtype=float)
    r = np.full(y.shape, cfg.aorta_base_radius)
    if cfg.aneurysm is not None:
        excess = cfg.aneurysm.peak_radius - cfg.aorta_base_radius
        r = r + excess * np.exp(-((y - cfg.aneurysm.center_y) ** 2)
                                / (2.0 * cfg.aneurysm.sigma ** 2))
    return float(r) if r.ndim == 0 else r


def ground_truth(cfg: PhantomConfig) -> GroundTruth:
    if cfg.aneurysm is not None:
        max_r = cfg.aneurysm.peak_radius
        max_y = cfg.aneurysm.center_y
    else:
        max_r = cfg.aorta_base_radius
        max_y = 0.0
    bulge_at_bif = radius_profile(cfg, cfg.bifurcation_y)
    return GroundTruth(
        has_aaa=2.0 * max_r >= AAA_DIAMETER_THRESHOLD,
        max_ap_diameter=2.0 * max_r,
        max_ap_y=max_y,
        has_thrombus=cfg.thrombus is not None and cfg.thrombus.fraction > 0,
        iliac_extension=bulge_at_bif > 1.1 * cfg.aorta_base_radius,
        iliac_ap_diameters=(2.0 * cfg.iliac_radius, 2.0 * cfg.iliac_radius),
        grade=cfg.atheromatosis_grade,
    )


def surface_height(cfg: PhantomConfig, xy) -> float:
    """Body surface height at xy; planar patch, identically 0."""
    return 0.0


def _wall_thickness_at(cfg: PhantomConfig, y):
    """Wall thickness per y, doubled where atheromatosis applies."""
    y = np.asarray(y, dtype=float)
    t = np.full(y.shape, WALL_THICKNESS)
    if cfg.atheromatosis_grade == "diffuse":
        t[...] = 2.0 * WALL_THICKNESS
    elif cfg.atheromatosis_grade == "segmentary":
        lo, hi = cfg.segmentary_extent_y
        t = np.where((y >= lo) & (y <= hi), 2.0 * WALL_THICKNESS, t)
    return t


def render_frame(cfg: PhantomConfig, p: Pose, frame_id: int,
                 frozen: bool = False) -> UsFrame:
    """Render one 256x256 B-mode-like slice through the probe axis.

    The image plane is spanned by the probe's lateral axis (columns) and
    its pointing axis (rows, depth).  Raises NoContactError when the probe
    is more than 5 mm off the surface.
    """
    pz = float(p.position[2])
    if abs(pz - surface_height(cfg, p.position[:2])) > CONTACT_TOL:
        raise NoContactError(f"probe at z={pz:.4f} m, no skin contact")

    n = FRAME_SIZE
    s = PIXEL_SPACING
    u = quat_rotate(p.orientation, np.array([1.0, 0.0, 0.0]))   # columns
    d = p.probe_axis()                                          # rows (depth)

    cols = (np.arange(n) + 0.5 - n / 2.0) * s
    rows = (np.arange(n) + 0.5) * s
    transverse = abs(u[1]) < 1e-12 and abs(d[1]) < 1e-12
    # world coordinates of each pixel center, three (n, n) planes
    X = p.position[0] + rows[:, None] * d[0] + cols[None, :] * u[0]
    Z = p.position[2] + rows[:, None] * d[2] + cols[None, :] * u[2]
    if transverse:
        # the whole slice sits at one y station: scalar profile terms
        Y = float(p.position[1])
    else:
        Y = p.position[1] + rows[:, None] * d[1] + cols[None, :] * u[1]
        Y = np.broadcast_to(Y, (n, n))
    X = np.broadcast_to(X, (n, n))
    Z = np.broadcast_to(Z, (n, n))

    depth = cfg.aorta_depth
    klass = np.zeros((n, n), dtype=np.uint8)    # 0 bg, 1 lumen, 2 thrombus, 3 wall
    t_wall = _wall_thickness_at(cfg, Y)
    y_min = Y if transverse else float(Y.min())
    y_max = Y if transverse else float(Y.max())

    # ---- aorta (y >= bifurcation) ----
    if y_max >= cfg.bifurcation_y:
        r_out = radius_profile(cfg, Y)
        rho = np.hypot(X, Z + depth)
        r_lumen = r_out if np.ndim(r_out) else float(r_out)
        if cfg.thrombus is not None and cfg.thrombus.fraction > 0:
            lo, hi = cfg.thrombus.extent_y
            th_mask = (Y >= lo) & (Y <= hi)
            r_lumen = np.where(th_mask, r_out * (1.0 - cfg.thrombus.fraction),
                               r_out)
        near = rho < r_out + t_wall
        if not transverse:
            near &= Y >= cfg.bifurcation_y
        klass[near & (rho < r_lumen)] = 1
        klass[near & (rho >= r_lumen) & (rho < r_out)] = 2
        klass[near & (rho >= r_out)] = 3

    # ---- iliacs (y < bifurcation) ----
    if y_min < cfg.bifurcation_y:
        for sign in (+1.0, -1.0):
            ax = sign * math.sin(cfg.iliac_angle)
            ay = -math.cos(cfg.iliac_angle)
            vx = X
            vy = Y - cfg.bifurcation_y
            vz = Z + depth
            proj = vx * ax + vy * ay
            dist2 = vx * vx + vy * vy + vz * vz - proj ** 2
            dist = np.sqrt(np.maximum(dist2, 0.0))
            in_branch = proj > 0.0
            if not transverse:
                in_branch &= Y < cfg.bifurcation_y
            klass[in_branch & (dist < cfg.iliac_radius)] = 1
            klass[in_branch & (dist >= cfg.iliac_radius)
                  & (dist < cfg.iliac_radius + t_wall)] = 3

    rng = np.random.default_rng((cfg.rng_seed ^ frame_id) & 0xFFFFFFFFFFFFFFFF)
    noise = rng.random((n, n))
    base = np.array([40.0, 5.0, 95.0, 190.0])   # bg, lumen, thrombus, wall
    span = np.array([130.0, 20.0, 40.0, 60.0])
    img = (base[klass] + span[klass] * noise).astype(np.uint8)

    return UsFrame(width=n, height=n, pixel_spacing=s, intensities=img,
                   pose=p, frame_id=frame_id, frozen=frozen)


def caliper_measure(f: UsFrame, a, b) -> float:
    """Distance in meters between two pixel coordinates on a frozen frame."""
    if not f.frozen:
        raise NotFrozenError("freeze the frame before measuring")
    for pt in (a, b):
        if not (0 <= pt[0] < f.width and 0 <= pt[1] < f.height):
            raise ValueError(f"caliper point {pt} outside frame")
    dx = float(a[0] - b[0])
    dy = float(a[1] - b[1])
    return math.hypot(dx, dy) * f.pixel_spacing


def _wall_run_px(frame: UsFrame, col: int) -> int:
    """Length in px of the first hyperechoic run from the top in a column."""
    column = frame.intensities[:, col]
    bright = column > WALL_MIN
    idx = np.flatnonzero(bright)
    if idx.size == 0:
        return 0
    start = idx[0]
    run = 1
    while start + run < frame.height and bright[start + run]:
        run += 1
    return run


def wall_thickened(frame: UsFrame) -> bool:
    """Near-wall brightness test: is the anterior wall band doubled?"""
    center = frame.width // 2
    runs = [_wall_run_px(frame, c) for c in range(center - 5, center + 6)]
    runs = [r for r in runs if r > 0]
    if not runs:
        return False
    normal_px = WALL_THICKNESS / frame.pixel_spacing
    return float(np.mean(runs)) > 1.5 * normal_px


# Aorta y-extent used for sweep-coverage checks: from the default
# bifurcation up to the cranial edge of the workspace.
DEFAULT_AORTA_SPAN = 0.065 - (-0.040)


def grade_estimate(frames, min_stations: int = 5,
                   span_required: float = 0.6 * DEFAULT_AORTA_SPAN) -> str:
    """Classify atheromatosis from a sweep of frames.

    Per station the anterior wall run length is thresholded at 1.5x the
    normal thickness; the fraction q of thickened stations maps to
    q = 0 -> none, q <= 0.5 -> segmentary, q > 0.5 -> diffuse.
    """
    frames = list(frames)
    if len(frames) < min_stations:
        raise InsufficientSweepError(f"need >= {min_stations} frames, got {len(frames)}")
    ys = [float(f.pose.position[1]) for f in frames]
    if max(ys) - min(ys) < span_required:
        raise InsufficientSweepError(
            f"sweep spans {max(ys) - min(ys):.3f} m, need {span_required:.3f} m")
    thickened = sum(1 for f in frames if wall_thickened(f))
    q = thickened / len(frames)
    if q == 0.0:
        return "none"
    if q <= 0.5:
        return "segmentary"
    return "diffuse"


# ---------------------------------------------------------------------------
# image-based measurement helpers (what the remote operator actually does)

def measure_ap_from_frame(frame: UsFrame, col: int | None = None):
    """AP vessel diameter from the wall-to-wall gap along one column.

    Returns (diameter_m, (a, b)) with a/b the caliper endpoints used, or
    None when no vessel cross-section is visible in that column.
    """
    col = frame.width // 2 if col is None else col
    column = frame.intensities[:, col]
    bright = np.flatnonzero(column > WALL_MIN)
    if bright.size < 2:
        return None
    top = bright[0]
    run = 1
    while top + run < frame.height and column[top + run] > WALL_MIN:
        run += 1
    after_top = top + run - 1          # last px of anterior wall
    below = bright[bright > after_top + 1]
    if below.size == 0:
        return None
    bottom = int(below[0])             # first px of posterior wall
    a = (col, int(after_top))
    b = (col, bottom)
    return (bottom - after_top) * frame.pixel_spacing, (a, b)


def detect_thrombus_in_frame(frame: UsFrame, col: int | None = None) -> bool:
    """Mid-echoic annulus between the walls along one column."""
    col = frame.width // 2 if col is None else col
    m = measure_ap_from_frame(frame, col)
    if m is None:
        return False
    _, ((_, top), (_, bottom)) = m
    inner = frame.intensities[top + 1:bottom, col]
    if inner.size == 0:
        return False
    mid = np.count_nonzero((inner >= THROMBUS_LO) & (inner <= THROMBUS_HI))
    return mid / inner.size > 0.1


# ---------------------------------------------------------------------------
# flat key/value serialization of PhantomConfig

def config_to_kv(cfg: PhantomConfig) -> str:
    """Serialize to the documented flat `key = value` format."""
    lines = ["format = tersim-phantom-v1"]
    d = asdict(cfg)
    an = d.pop("aneurysm")
    th = d.pop("thrombus")
    for k, v in d.items():
        if isinstance(v, tuple):
            v = f"{v[0]} {v[1]}"
        lines.append(f"{k} = {v}")
    if an is not None:
        for k, v in an.items():
            lines.append(f"aneurysm.{k} = {v}")
    if th is not None:
        lines.append(f"thrombus.fraction = {th['fraction']}")
        lines.append(f"thrombus.extent_y = {th['extent_y'][0]} {th['extent_y'][1]}")
    return "\n".join(lines) + "\n"


def config_from_kv(text: str) -> PhantomConfig:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        k, v = (part.strip() for part in line.split("=", 1))
        kv[k] = v
    if kv.pop("format", None) != "tersim-phantom-v1":
        raise ValueError("missing or unknown 'format' line")

    def pair(v):
        a, b = v.split()
        return (float(a), float(b))

    aneurysm = None
    if "aneurysm.center_y" in kv:
        aneurysm = Aneurysm(center_y=float(kv.pop("aneurysm.center_y")),
                            peak_radius=float(kv.pop("aneurysm.peak_radius")),
                            sigma=float(kv.pop("aneurysm.sigma")))
    thrombus = None
    if "thrombus.fraction" in kv:
        thrombus = Thrombus(fraction=float(kv.pop("thrombus.fraction")),
                            extent_y=pair(kv.pop("thrombus.extent_y")))
    known = {"aorta_depth", "aorta_base_radius", "bifurcation_y",
             "iliac_radius", "iliac_angle", "atheromatosis_grade",
             "segmentary_extent_y", "stiffness", "rng_seed"}
    unknown = set(kv) - known
    if unknown:
        raise ValueError(f"unknown keys: {sorted(unknown)}")
    return PhantomConfig(
        aorta_depth=float(kv.pop("aorta_depth")),
        aorta_base_radius=float(kv.pop("aorta_base_radius")),
        aneurysm=aneurysm,
        thrombus=thrombus,
        bifurcation_y=float(kv.pop("bifurcation_y")),
        iliac_radius=float(kv.pop("iliac_radius")),
        iliac_angle=float(kv.pop("iliac_angle")),
        atheromatosis_grade=kv.pop("atheromatosis_grade"),
        segmentary_extent_y=pair(kv.pop("segmentary_extent_y")),
        stiffness=float(kv.pop("stiffness")),
        rng_seed=int(kv.pop("rng_seed")),
    )


# Named presets: the 5.4 cm aneurysm mirrors the reported median AAA size.
PRESETS: dict[str, PhantomConfig] = {
    "normal_aorta": PhantomConfig(),
    "aaa_54mm": PhantomConfig(
        aneurysm=Aneurysm(center_y=0.0, peak_radius=0.027, sigma=0.02),
        rng_seed=7),
    "aaa_thrombus": PhantomConfig(
        aneurysm=Aneurysm(center_y=0.0, peak_radius=0.024, sigma=0.018),
        thrombus=Thrombus(fraction=0.35, extent_y=(-0.025, 0.025)),
        rng_seed=11),
    "diffuse_atheromatosis": PhantomConfig(
        atheromatosis_grade="diffuse", rng_seed=13),
}
