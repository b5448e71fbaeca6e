"""Synthetic colon phantom and paired scope/colon insertion sequences.

The phantom centerline is a natural cubic spline through control points
(cecum first), reparameterized by arc length. Markers sit at equal
arc-length stations, lifted ``surface_radius`` mm off the centerline on the
camera-facing (+z) side.

Each frame of a withdrawal places the scope tip at insertion depth ``d``
(measured along the centerline from the anus), bends the scope body from
the centerline toward the straight anus-tip chord where the colon is
curved, samples the sensor points back from the tip, and pulls every
marker toward the nearest point of the scope body.
"""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import InvalidInputError
from .shapes import ColonShape, Frame, InsertionSequence, ScopeShape

# Planar four-bend layout (ascending, transverse, descending, sigmoid) with a
# small out-of-plane sag; roughly 1.5 m of centerline.
DEFAULT_CONTROL_POINTS = (
    (260.0, -40.0, 0.0),     # cecum
    (270.0, 120.0, 10.0),
    (250.0, 260.0, 20.0),    # hepatic flexure
    (120.0, 230.0, 45.0),
    (-20.0, 250.0, 40.0),    # transverse
    (-170.0, 280.0, 25.0),
    (-250.0, 250.0, 15.0),   # splenic flexure
    (-260.0, 100.0, 5.0),
    (-240.0, -60.0, 0.0),    # descending
    (-150.0, -120.0, 20.0),
    (-60.0, -40.0, 35.0),    # sigmoid loop
    (10.0, -110.0, 15.0),
    (0.0, -210.0, 0.0),      # anus
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_TABLE_STEPS_PER_SEGMENT = 128
_BODY_STEP = 1.0  # mm, resolution of the scope-body polyline
_UP = np.array([0.0, 0.0, 1.0])


class Centerline:
    """Arc-length parameterized spline through ``control_points``."""

    def __init__(self, control_points):
        pts = np.asarray(control_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise InvalidInputError("need at least two 3-D control points")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("control points must be finite")
        chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chord <= 0):
            raise InvalidInputError("consecutive control points coincide")
        u = np.concatenate([[0.0], np.cumsum(chord)])
        self.control_points = pts
        self.spline = CubicSpline(u, pts, bc_type="natural")
        self._d1 = self.spline.derivative(1)
        self._d2 = self.spline.derivative(2)

        # dense s(u) table by Gauss-Legendre quadrature of |c'(u)|
        grid = np.concatenate(
            [np.linspace(a, b, _TABLE_STEPS_PER_SEGMENT + 1)[:-1] for a, b in zip(u[:-1], u[1:])]
            + [u[-1:]]
        )
        lo, hi = grid[:-1], grid[1:]
        half = 0.5 * (hi - lo)
        nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_NODES[None, :]
        speed = np.linalg.norm(self._d1(nodes.ravel()), axis=1).reshape(nodes.shape)
        seg_len = half * (speed @ _GL_WEIGHTS)
        s = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(s[-1])
        if not self.length > 0:
            raise InvalidInputError("centerline has zero arc length")
        self._u_of_s = CubicHermiteSpline(s, grid, 1.0 / self.speed(grid))
        self._u_end = u[-1]

    def speed(self, u):
        return np.linalg.norm(self._d1(u), axis=-1)

    def param(self, s):
        """Spline parameter at arc length ``s`` (clamped to the curve)."""
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        return np.clip(self._u_of_s(s), 0.0, self._u_end)

    def position(self, s):
        return self.spline(self.param(s))

    def tangent(self, s):
        d = self._d1(self.param(s))
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def curvature(self, s):
        u = self.param(s)
        d1 = self._d1(u)
        d2 = self._d2(u)
        num = np.linalg.norm(np.cross(d1, d2), axis=-1)
        return num / np.linalg.norm(d1, axis=-1) ** 3


@dataclass(frozen=True)
class PhantomConfig:
    n_centerline_samples: int = 200
    control_points: tuple = DEFAULT_CONTROL_POINTS
    marker_count: int = 12
    scope_point_count: int = 6
    sensor_spacing: float = 80.0
    surface_radius: float = 20.0

    def __post_init__(self):
        object.__setattr__(
            self, "control_points", tuple(tuple(float(c) for c in p) for p in self.control_points)
        )
        if self.marker_count < 2:
            raise InvalidInputError("marker_count must be >= 2")
        if self.scope_point_count < 2:
            raise InvalidInputError("scope_point_count must be >= 2")
        if self.n_centerline_samples < 2:
            raise InvalidInputError("n_centerline_samples must be >= 2")
        if not self.sensor_spacing > 0:
            raise InvalidInputError("sensor_spacing must be > 0")
        if self.surface_radius < 0:
            raise InvalidInputError("surface_radius must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["control_points"] = [list(p) for p in self.control_points]
        return d


@dataclass(frozen=True)
class InsertionConfig:
    n_frames: int = 300
    frame_rate: float = 6.0
    direction: str = "withdrawal"  # cecum -> anus; "insertion" reverses it
    coupling_strength: float = 0.5
    coupling_decay: float = 60.0
    max_marker_displacement: float = 40.0
    noise_sigma_scope: float = 0.5
    noise_sigma_marker: float = 1.0
    # bend radius at which the scope body moves halfway (times coupling) to the chord
    straightening_radius: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise InvalidInputError("n_frames must be >= 1")
        if not self.frame_rate > 0:
            raise InvalidInputError("frame_rate must be > 0")
        if self.direction not in ("withdrawal", "insertion"):
            raise InvalidInputError(f"unknown direction {self.direction!r}")
        if not 0.0 <= self.coupling_strength <= 1.0:
            raise InvalidInputError("coupling_strength must lie in [0, 1]")
        for name in ("coupling_decay", "max_marker_displacement", "noise_sigma_scope", "noise_sigma_marker"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if not self.straightening_radius > 0:
            raise InvalidInputError("straightening_radius must be > 0")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Phantom:
    config: PhantomConfig
    curve: Centerline
    centerline: np.ndarray  # (n_centerline_samples, 3), uniform in arc length
    marker_arc: np.ndarray  # (M,) arc position of each marker station
    rest_colon: ColonShape = field(default=None)

    @property
    def length(self):
        return self.curve.length


def _surface_offset(tangents):
    up = _UP - (tangents @ _UP)[:, None] * tangents
    norm = np.linalg.norm(up, axis=1)
    # tangent parallel to +z: fall back to +x projected
    bad = norm < 1e-9
    if np.any(bad):
        alt = np.array([1.0, 0.0, 0.0])
        up[bad] = alt - (tangents[bad] @ alt)[:, None] * tangents[bad]
        norm[bad] = np.linalg.norm(up[bad], axis=1)
    return up / norm[:, None]


def generate_phantom(cfg=None):
    cfg = cfg or PhantomConfig()
    curve = Centerline(cfg.control_points)
    L = curve.length
    samples = curve.position(np.linspace(0.0, L, cfg.n_centerline_samples))
    marker_arc = np.linspace(0.0, L, cfg.marker_count)
    on_curve = curve.position(marker_arc)
    markers = on_curve + cfg.surface_radius * _surface_offset(curve.tangent(marker_arc))
    return Phantom(cfg, curve, samples, marker_arc, ColonShape(markers))


def tip_depths(cfg, length):
    """Insertion depth (mm from the anus along the centerline) per frame."""
    if cfg.n_frames == 1:
        d = np.array([length])
    else:
        d = length * (1.0 - np.arange(cfg.n_frames) / (cfg.n_frames - 1))
    return d if cfg.direction == "withdrawal" else d[::-1].copy()


def scope_body(phantom, depth, cfg):
    """Dense polyline of the scope from tip to anus at insertion depth ``depth``."""
    curve = phantom.curve
    L = curve.length
    s_tip = L - depth
    span = L - s_tip
    if span <= 0:
        return curve.position(np.array([L]))
    k = max(2, int(np.ceil(span / _BODY_STEP)) + 1)
    s = np.linspace(s_tip, L, k)
    p = curve.position(s)
    if cfg.coupling_strength == 0:
        return p
    frac = (s - s_tip) / span
    chord = p[0] + frac[:, None] * (p[-1] - p[0])
    kappa = curve.curvature(s)
    k_ref = 1.0 / cfg.straightening_radius
    w = cfg.coupling_strength * kappa / (kappa + k_ref)
    return p + w[:, None] * (chord - p)


def sample_sensors(body, n_points, spacing):
    """``n_points`` points at ``spacing`` mm path distance back from the tip."""
    if len(body) == 1:
        return np.repeat(body, n_points, axis=0)
    seg = np.linalg.norm(np.diff(body, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    want = np.minimum(np.arange(n_points) * spacing, cum[-1])
    return np.stack([np.interp(want, cum, body[:, c]) for c in range(3)], axis=1)


def deform_markers(rest, body, cfg):
    """Pull each rest marker toward its nearest scope-body point."""
    diff = body[None, :, :] - rest[:, None, :]
    d2 = np.sum(diff**2, axis=2)
    nearest = np.argmin(d2, axis=1)
    vec = diff[np.arange(len(rest)), nearest]
    dist = np.sqrt(d2[np.arange(len(rest)), nearest])
    if cfg.coupling_decay > 0:
        gain = cfg.coupling_strength * np.exp(-dist / cfg.coupling_decay)
    else:
        gain = np.where(dist == 0, cfg.coupling_strength, 0.0)
    disp = gain[:, None] * vec
    mag = np.linalg.norm(disp, axis=1)
    cap = cfg.max_marker_displacement
    scale = np.where(mag > cap, cap / np.where(mag > 0, mag, 1.0), 1.0)
    return rest + disp * scale[:, None]


def _noise(seed, t, n, sigma, role):
    if sigma == 0:
        return np.zeros((n, 3))
    out = np.empty((n, 3))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(t), i, role]))
        out[i] = rng.normal(0.0, sigma, 3)
    return out


def simulate_insertion(phantom, cfg=None, seq_id=None):
    cfg = cfg or InsertionConfig()
    pc = phantom.config
    rest = phantom.rest_colon.points
    frames = []
    for t, depth in enumerate(tip_depths(cfg, phantom.length)):
        body = scope_body(phantom, depth, cfg)
        scope = sample_sensors(body, pc.scope_point_count, pc.sensor_spacing)
        colon = deform_markers(rest, body, cfg)
        scope = scope + _noise(cfg.seed, t, len(scope), cfg.noise_sigma_scope, 0)
        colon = colon + _noise(cfg.seed, t, len(colon), cfg.noise_sigma_marker, 1)
        frames.append(Frame(t, t / cfg.frame_rate, ScopeShape(scope), ColonShape(colon)))
    meta = {"simulator": {"phantom": pc.to_dict(), "insertion": cfg.to_dict()}}
    return InsertionSequence(seq_id or f"sim-{cfg.seed}", cfg.frame_rate, tuple(frames), meta)
