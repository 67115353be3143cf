"""Scene containers, the seeded RNG contract, phantoms and the RMSE metric.

Images are float64 arrays of shape ``(n1, n2)``; videos are float64 arrays of
shape ``(N, n1, n2)`` with frames outermost. Both are row-major.

Every random draw in the package goes through :func:`make_rng`, which builds a
``numpy.random.Generator`` on the counter-based Philox4x64 bit generator.  The
generator is keyed by the user seed plus a tuple of integer stream labels, so
independent consumers (a mask, a downsampler pattern, trial ``k`` of a Monte
Carlo loop) never share a stream.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

MAX_SEED = 2**64 - 1


class CakeError(Exception):
    """Base class for all package errors."""


class ShapeError(CakeError, ValueError):
    pass


class DomainError(CakeError, ValueError):
    pass


class CapacityError(CakeError, ValueError):
    pass


class DegenerateError(CakeError, ValueError):
    pass


class UnsupportedParameterError(CakeError, ValueError):
    pass


class NumericalFailureError(CakeError, RuntimeError):
    """Raised when an iterative method produces a non-finite objective."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

# Stream labels; keep them stable, they are part of the reproducibility contract.
STREAM_MASK = 1
STREAM_PHASE = 2
STREAM_DOWNSAMPLE = 3
STREAM_PHANTOM = 4
STREAM_NOISE = 5
STREAM_BINARIZE = 6
STREAM_TRIAL = 7


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def make_rng(seed, *stream):
    """Return a Philox-backed Generator for ``seed`` and a stream label path."""
    seed = check_seed(seed)
    entropy = [seed & 0xFFFFFFFF, seed >> 32, *[int(s) for s in stream]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def trial_seed(master, k):
    """Derive the seed of trial ``k`` from a master seed by counter."""
    master = check_seed(master)
    ss = np.random.SeedSequence([master & 0xFFFFFFFF, master >> 32, STREAM_TRIAL, int(k)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def as_image(x):
    """Validate and return ``x`` as a finite float64 ``(n1, n2)`` array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 1:
        raise ShapeError(f"image must be a non-empty 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("image contains non-finite values")
    return x


def as_video(x):
    """Validate and return ``x`` as a finite float64 ``(N, n1, n2)`` array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or min(x.shape) < 1:
        raise ShapeError(f"video must be a non-empty 3-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("video contains non-finite values")
    return x


@dataclass
class MetricsRecord:
    label: str
    rmse_percent: float
    runtime_seconds: float
    config_digest: str
    extra: dict = field(default_factory=dict)

    def row(self):
        out = {"label": self.label}
        out.update(self.extra)
        out["rmse_percent"] = f"{self.rmse_percent:.6f}"
        out["runtime_seconds"] = f"{self.runtime_seconds:.3f}"
        out["config_digest"] = self.config_digest
        return out


def digest(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

def rmse(estimate, truth):
    """Relative error in percent, ``100 * ||estimate - truth|| / ||truth||``."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth.ravel())
    if denom == 0:
        raise DomainError("truth has zero norm")
    return 100.0 * float(np.linalg.norm((estimate - truth).ravel()) / denom)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

PHANTOM_KINDS = ("sparse-spikes", "piecewise-constant", "neuron-like")
VIDEO_PHANTOM_KINDS = ("moving-blob", "multi-object")


def axis_difference_counts(img):
    """Nonzero counts of the first differences along each axis.

    The difference keeps the first sample (the invertible form), so a nonzero
    value on the leading row/column counts as an edge.
    """
    d0 = np.diff(img, axis=0, prepend=0.0)
    d1 = np.diff(img, axis=1, prepend=0.0)
    return int(np.count_nonzero(d0)), int(np.count_nonzero(d1))


def make_phantom(kind, n1, n2, s, seed):
    """Generate a synthetic test scene with values in ``[0, 1]``.

    ``sparse-spikes`` has exactly ``s`` nonzero pixels.  ``piecewise-constant``
    is a union of rectangles whose first differences have at most ``s``
    nonzeros along each axis.  ``neuron-like`` is a soma with branching
    one-to-two pixel wide dendrites on a flat background; there ``s`` sets the
    number of primary dendrites.
    """
    n1, n2, s = int(n1), int(n2), int(s)
    if n1 < 1 or n2 < 1:
        raise ShapeError("phantom dimensions must be positive")
    if s < 1:
        raise DomainError("sparsity must be positive")
    if s > n1 * n2:
        raise DomainError(f"sparsity {s} exceeds pixel count {n1 * n2}")
    rng = make_rng(seed, STREAM_PHANTOM, PHANTOM_KINDS.index(kind) if kind in PHANTOM_KINDS else 99)
    if kind == "sparse-spikes":
        img = np.zeros(n1 * n2)
        loc = rng.choice(n1 * n2, size=s, replace=False)
        img[loc] = rng.uniform(0.5, 1.0, size=s)
        return img.reshape(n1, n2)
    if kind == "piecewise-constant":
        return _piecewise_constant(n1, n2, s, rng)
    if kind == "neuron-like":
        return _neuron(n1, n2, s, rng)
    raise UnsupportedParameterError(f"unknown phantom kind {kind!r}")


def _piecewise_constant(n1, n2, s, rng):
    img = np.zeros((n1, n2))
    for _ in range(64):
        h = int(rng.integers(1, max(2, n1 // 2) + 1))
        w = int(rng.integers(1, max(2, n2 // 2) + 1))
        r = int(rng.integers(0, n1 - h + 1))
        c = int(rng.integers(0, n2 - w + 1))
        trial = img.copy()
        trial[r:r + h, c:c + w] = rng.uniform(0.2, 1.0)
        if max(axis_difference_counts(trial)) <= s:
            img = trial
    return img


def _neuron(n1, n2, branches, rng, background=0.1):
    img = np.full((n1, n2), background)
    scale = min(n1, n2)
    cy = n1 / 2 + rng.uniform(-0.08, 0.08) * n1
    cx = n2 / 2 + rng.uniform(-0.08, 0.08) * n2
    soma_r = max(2.0, 0.06 * scale)
    yy, xx = np.mgrid[0:n1, 0:n2]

    def stamp(y, x, width, value):
        iy, ix = int(round(y)), int(round(x))
        for dy in range(width):
            for dx in range(width):
                py, px = iy + dy, ix + dx
                if 0 <= py < n1 and 0 <= px < n2:
                    img[py, px] = max(img[py, px], value)

    # iterative L-system style growth: (y, x, heading, length, depth)
    stack = []
    n_primary = max(1, min(int(branches), 12))
    base = rng.uniform(0, 2 * np.pi)
    for k in range(n_primary):
        ang = base + 2 * np.pi * k / n_primary + rng.uniform(-0.3, 0.3)
        y0 = cy + soma_r * np.sin(ang)
        x0 = cx + soma_r * np.cos(ang)
        stack.append((y0, x0, ang, rng.uniform(0.25, 0.4) * scale, 3))
    while stack:
        y, x, ang, length, depth = stack.pop()
        width = 2 if depth >= 3 else 1
        value = 0.55 + 0.1 * depth
        steps = int(length)
        for _ in range(steps):
            ang += rng.normal(0.0, 0.12)
            y += np.sin(ang)
            x += np.cos(ang)
            if not (0 <= y < n1 and 0 <= x < n2):
                break
            stamp(y, x, width, value)
            # sparse spines
            if depth <= 1 and rng.random() < 0.08:
                stamp(y + 1.5 * np.cos(ang), x - 1.5 * np.sin(ang), 1, value)
        else:
            if depth > 0:
                spread = rng.uniform(0.35, 0.7)
                for sgn in (-1.0, 1.0):
                    stack.append((y, x, ang + sgn * spread, length * rng.uniform(0.55, 0.8), depth - 1))
    soma = (yy - cy) ** 2 + (xx - cx) ** 2 <= soma_r ** 2
    img[soma] = 1.0
    return img


def _video_background(n1, n2, rng):
    bg = np.full((n1, n2), 0.25)
    horizon = int(n1 * rng.uniform(0.35, 0.5))
    bg[horizon:, :] = 0.45
    # one static landmark block
    h, w = max(2, n1 // 6), max(2, n2 // 5)
    r = int(rng.integers(0, max(1, horizon - h)))
    c = int(rng.integers(0, n2 - w))
    bg[r:r + h, c:c + w] = 0.6
    return bg


def _paint_disk(frame, cy, cx, radius, value):
    n1, n2 = frame.shape
    yy, xx = np.mgrid[0:n1, 0:n2]
    dy = (yy - cy + n1 / 2) % n1 - n1 / 2
    dx = (xx - cx + n2 / 2) % n2 - n2 / 2
    frame[dy ** 2 + dx ** 2 <= radius ** 2] = value


def _paint_rect(frame, cy, cx, h, w, value):
    n1, n2 = frame.shape
    rows = (np.arange(h) + cy) % n1
    cols = (np.arange(w) + cx) % n2
    frame[np.ix_(rows, cols)] = value


def make_video_phantom(kind, n1, n2, N, seed, velocity=None):
    """Generate an ``(N, n1, n2)`` video of objects translating over a static background.

    Object positions at frame ``t`` are ``round(p0 + v * t)`` (wrapping
    circularly), so shapes are rigid and differences between frames only
    appear around object boundaries.  ``velocity`` overrides the seeded
    velocity of the first object; ``(0, 0)`` gives a static video for
    ``moving-blob``.
    """
    n1, n2, N = int(n1), int(n2), int(N)
    if N < 1:
        raise DomainError("frame count must be at least 1")
    if n1 < 4 or n2 < 4:
        raise ShapeError("video phantoms need frames of at least 4x4")
    if kind not in VIDEO_PHANTOM_KINDS:
        raise UnsupportedParameterError(f"unknown video phantom kind {kind!r}")
    rng = make_rng(seed, STREAM_PHANTOM, 10 + VIDEO_PHANTOM_KINDS.index(kind))
    bg = _video_background(n1, n2, rng)
    scale = min(n1, n2)

    objects = []
    n_obj = 1 if kind == "moving-blob" else 3
    for k in range(n_obj):
        p0 = (rng.uniform(0.2, 0.8) * n1, rng.uniform(0.1, 0.9) * n2)
        speed = rng.uniform(0.4, 1.0)
        v = (rng.uniform(-0.25, 0.25) * speed, speed * (1 if rng.random() < 0.5 else -1))
        if k == 0 and velocity is not None:
            v = (float(velocity[0]), float(velocity[1]))
        size = rng.uniform(0.12, 0.2) * scale
        shape = "disk" if k % 2 == 0 else "rect"
        objects.append((p0, v, size, shape, 0.95 - 0.15 * k))

    video = np.empty((N, n1, n2))
    for t in range(N):
        frame = bg.copy()
        for p0, v, size, shape, value in objects:
            cy = int(round(p0[0] + v[0] * t))
            cx = int(round(p0[1] + v[1] * t))
            if shape == "disk":
                _paint_disk(frame, cy, cx, size / 2, value)
            else:
                _paint_rect(frame, cy, cx, max(2, int(size / 2)), max(3, int(size)), value)
        video[t] = frame
    return video


def blob_perimeter(radius):
    """Upper bound on boundary pixel count of a rasterised disk of ``radius``."""
    return int(math.ceil(2 * math.pi * radius)) + 4
