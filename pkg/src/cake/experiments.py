"""Experiment protocol: noise, conventional baselines and the two result tables.

Static experiments sweep mask family x downsampler x block size and record
the best RMSE per reconstruction penalty; video experiments compare keyed
exposure with independent and difference codes against block-averaging
cameras followed by interpolation.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from .core import (
    STREAM_NOISE,
    CakeError,
    DomainError,
    ShapeError,
    UnsupportedParameterError,
    MetricsRecord,
    as_video,
    digest,
    make_phantom,
    make_rng,
    make_video_phantom,
    rmse,
)
from .masks import (
    difference_matrix,
    gen_mask,
    gen_mask_sequence,
    to_implementable,
    transform_mask_sequence,
    binarize_sequence,
)
from .operators import CakeOperator, Downsampler, FrameCumsum, LinearOperator, Sensing, canonical_kind
from .precond import BlockPreconditionedSystem, PreconditionedSystem, estimate_signal_mean
from .solvers import Penalty, SolverConfig, cg_least_squares, solve, solve_video

log = logging.getLogger(__name__)

STATIC_PENALTIES = ("l1-haar", "tv-aniso", "tv-iso")
PENALTY_ALIASES = {"l1": "l1-pixel", "l1-haar": "l1-transform", "tv-aniso": "tv-aniso", "tv-iso": "tv-iso"}
MASK_FAMILIES = ("BS", "US", "GS", "UP")


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

def add_noise(y, sigma, seed, stream=()):
    """``y`` plus i.i.d. ``Normal(0, sigma^2)`` samples from a seeded stream."""
    if sigma < 0:
        raise DomainError("noise level must be nonnegative")
    y = np.asarray(y, dtype=np.float64)
    if sigma == 0:
        return y.copy()
    rng = make_rng(seed, STREAM_NOISE, *stream)
    return y + sigma * rng.standard_normal(y.shape)


def calibrate_noise(A, f, ratio=16.0):
    """Noise variance ``var(A f) / ratio`` (population variance of the entries)."""
    y = A.apply(f) if isinstance(A, LinearOperator) else np.asarray(A, dtype=np.float64)
    return float(np.var(y)) / ratio


# ---------------------------------------------------------------------------
# conventional camera
# ---------------------------------------------------------------------------

def conventional_capture(scene, d1, d2, B=1):
    """Block means over ``d1 x d2`` pixels (and ``B`` frames for video)."""
    x = np.asarray(scene, dtype=np.float64)
    if x.ndim == 2:
        if B != 1:
            raise ShapeError("temporal blocks need a video")
        vid = x[None]
    elif x.ndim == 3:
        vid = x
    else:
        raise ShapeError(f"scene must be 2-D or 3-D, got {x.ndim}-D")
    N, n1, n2 = vid.shape
    if n1 % d1 or n2 % d2 or N % B:
        raise ShapeError(f"blocks ({B}, {d1}, {d2}) do not divide scene {vid.shape}")
    out = vid.reshape(N // B, B, n1 // d1, d1, n2 // d2, d2).mean(axis=(1, 3, 5))
    return out[0] if x.ndim == 2 else out


def interpolation_matrix(m, factor, method):
    """``(m * factor, m)`` matrix resampling block centres back onto pixels.

    ``nearest`` replicates each sample over its block; ``cubic`` is the
    Catmull-Rom cubic through the block centres with clamped ends.  Rows sum
    to one, so constants are reproduced exactly.
    """
    n = m * factor
    W = np.zeros((n, m))
    if method == "nearest":
        W[np.arange(n), np.arange(n) // factor] = 1.0
        return W
    if method != "cubic":
        raise UnsupportedParameterError(f"unknown interpolation {method!r}")
    u = (np.arange(n) - (factor - 1) / 2.0) / factor
    j = np.floor(u).astype(int)
    t = u - j
    weights = (
        0.5 * (-t**3 + 2 * t**2 - t),
        0.5 * (3 * t**3 - 5 * t**2 + 2),
        0.5 * (-3 * t**3 + 4 * t**2 + t),
        0.5 * (t**3 - t**2),
    )
    for off, w in zip(range(-1, 3), weights):
        np.add.at(W, (np.arange(n), np.clip(j + off, 0, m - 1)), w)
    return W


def interpolate(data, method, d1, d2, B=1):
    """Upsample conventional data by ``(B, d1, d2)`` (``B`` only for video)."""
    x = np.asarray(data, dtype=np.float64)
    vid = x[None] if x.ndim == 2 else x
    K, m1, m2 = vid.shape
    out = np.einsum("ia,kab,jb->kij", interpolation_matrix(m1, d1, method), vid,
                    interpolation_matrix(m2, d2, method))
    if x.ndim == 2:
        return out[0]
    if B > 1:
        out = np.einsum("tk,kij->tij", interpolation_matrix(K, B, method), out)
    return out


def block_mean_operator(n1, n2, d1, d2):
    """Conventional imager as a linear map: mean over each pixel block."""
    down = Downsampler("integrate", n1, n2, d1, d2)
    s = 1.0 / (d1 * d2)
    return LinearOperator(down.in_shape, down.out_shape, lambda x: s * down._apply(x),
                          lambda y: s * down._adjoint(y), f"mean[{d1}x{d2}]")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _as_list(v, cast=str):
    if isinstance(v, (list, tuple)):
        return tuple(cast(x) for x in v)
    return tuple(cast(x.strip()) for x in str(v).split(",") if x.strip())


def _as_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise DomainError(f"not a boolean: {v!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment needs; serialises to flat ``key = value`` text."""

    experiment: str = "static"  # static | video
    phantom: str = "neuron-like"
    input: str = ""
    n1: int = 128
    n2: int = 128
    s: int = 6
    N: int = 28
    velocity: str = ""  # "vy,vx" for moving-blob; empty for the seeded default
    masks: tuple = ("BS", "US", "UP")
    downsamplers: tuple = ("integrate", "random-sum", "subsample")
    d: tuple = (4, 16, 64)
    d1: int = 2
    d2: int = 2
    B: int = 4
    penalties: tuple = STATIC_PENALTIES
    conventional: bool = True
    tau_points: int = 11
    tau_low: float = -2.0  # decades relative to the grid centre
    tau_high: float = 2.0
    tau_scale: float = 1e-2
    video_tau_points: int = 5
    video_tau_low: float = -1.0
    video_tau_high: float = 1.0
    video_tau_ratio: float = 1.0  # tau_tv / tau_l1 along the video path
    video_tol: float = 1e-5
    max_iterations: int = 2000
    tol: float = 1e-3
    cg_iters: int = 10
    inner_iters: int = 20
    noise: str = "auto"  # anchor-d4 | none | auto (anchor-d4 for static, none for video)
    noise_ratio: float = 16.0
    binarize: bool = False
    roi: str = ""  # "r0:r1,c0:c1"
    seed: int = 1
    out: str = ""

    _LISTS = {"masks": str, "downsamplers": str, "d": int, "penalties": str}

    def __post_init__(self):
        if self.experiment not in ("static", "video"):
            raise UnsupportedParameterError(f"unknown experiment {self.experiment!r}")
        if self.noise not in ("anchor-d4", "none", "auto"):
            raise UnsupportedParameterError(f"unknown noise rule {self.noise!r}")
        for fam in self.masks:
            if fam.upper() not in MASK_FAMILIES:
                raise UnsupportedParameterError(f"unknown mask family {fam!r}")
        for kind in self.downsamplers:
            canonical_kind(kind)
        for p in self.penalties:
            if p not in PENALTY_ALIASES:
                raise UnsupportedParameterError(f"unknown penalty {p!r}")
        for d in self.d:
            r = math.isqrt(d)
            if r * r != d:
                raise DomainError(f"block factor d={d} must be a perfect square")
            if self.experiment == "static" and (self.n1 % r or self.n2 % r):
                raise ShapeError(f"block {r}x{r} does not divide image {self.n1}x{self.n2}")
        if self.tau_points < 1 or self.video_tau_points < 1:
            raise DomainError("tau grids need at least one point")
        if self.experiment == "video" and (self.N % self.B or self.n1 % self.d1 or self.n2 % self.d2):
            raise ShapeError("video dimensions must be divisible by the block sizes")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls) if not f.name.startswith("_")]

    @classmethod
    def from_mapping(cls, mapping, base=None):
        base = base or cls()
        known = set(cls.keys())
        updates = {}
        for key, value in mapping.items():
            key = key.replace("-", "_")
            if key not in known:
                raise UnsupportedParameterError(f"unknown config key {key!r}")
            if value is None:
                continue
            current = getattr(base, key)
            if key in cls._LISTS:
                updates[key] = _as_list(value, cls._LISTS[key])
            elif isinstance(current, bool):
                updates[key] = _as_bool(value)
            elif isinstance(current, int):
                updates[key] = int(value)
            elif isinstance(current, float):
                updates[key] = float(value)
            else:
                updates[key] = str(value).strip()
        return replace(base, **updates)

    @classmethod
    def parse(cls, text, base=None):
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"config line {lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
        return cls.from_mapping(mapping, base)

    @classmethod
    def load(cls, path, base=None):
        with open(path) as fh:
            return cls.parse(fh.read(), base)

    def to_text(self):
        lines = []
        for key in self.keys():
            if key == "out":
                continue  # where results go does not change them
            v = getattr(self, key)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    @property
    def noisy(self):
        if self.noise == "auto":
            return self.experiment == "static"
        return self.noise == "anchor-d4"

    @property
    def digest(self):
        return digest(self.to_text())

    def solver_config(self, init="cg"):
        return SolverConfig(max_iterations=self.max_iterations, tol=self.tol, inner_iters=self.inner_iters,
                            cg_iters=self.cg_iters, init=init)

    def roi_slices(self):
        if not self.roi:
            return None
        rows, cols = self.roi.split(",")
        r0, r1 = (int(v) for v in rows.split(":"))
        c0, c1 = (int(v) for v in cols.split(":"))
        return slice(r0, r1), slice(c0, c1)


def tau_grid(center, points, low=-2.0, high=2.0):
    """``points`` geometric weights from ``center*10**low`` to ``center*10**high``."""
    if points == 1:
        return np.array([center])
    return center * 10.0 ** np.linspace(low, high, points)


def _stable_id(text):
    return int(digest(text), 16) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# static experiment
# ---------------------------------------------------------------------------

def load_scene(config):
    if config.input:
        from .io import read_cake1

        return np.asarray(read_cake1(config.input), dtype=np.float64)
    if config.experiment == "video":
        vel = None
        if config.velocity:
            vel = tuple(float(v) for v in config.velocity.split(","))
        return make_video_phantom(config.phantom, config.n1, config.n2, config.N, config.seed, velocity=vel)
    return make_phantom(config.phantom, config.n1, config.n2, config.s, config.seed)


def _sweep(sys, penalty_kind, truth, config, x0=None):
    """Best-RMSE solve over the tau grid; returns ``(rmse, tau, result, monotone)``."""
    center = config.tau_scale * float(np.max(np.abs(sys.A0.adjoint(sys.y0))))
    if center == 0:
        center = config.tau_scale
    best = None
    monotone = True
    for tau in tau_grid(center, config.tau_points, config.tau_low, config.tau_high):
        res = solve(sys, None, Penalty(penalty_kind, tau), config.solver_config(), x0=x0)
        monotone &= bool(np.all(np.diff(res.objective) <= 0))
        err = rmse(res.estimate, truth)
        if best is None or err < best[0]:
            best = (err, float(tau), res)
    return best[0], best[1], best[2], monotone


def _cell_system(A, f, sigma, config, stream):
    y = add_noise(A.apply(f), sigma, config.seed, stream)
    return PreconditionedSystem(A, y)


def _static_records(sys, f, config, base, t_build):
    out = []
    t0 = time.perf_counter()
    x = cg_least_squares(sys.A0, sys.y0, config.cg_iters)
    init = x + estimate_signal_mean(sys)
    out.append(("cg-init", rmse(init, f), None, True, time.perf_counter() - t0 + t_build))
    for p in config.penalties:
        t0 = time.perf_counter()
        err, tau, _, mono = _sweep(sys, PENALTY_ALIASES[p], f, config, x0=x)
        out.append((p, err, tau, mono, time.perf_counter() - t0))
    return [
        MetricsRecord(f"{base['downsampler']}/{base['mask']}/d={base['d']}/{col}", err, rt, config.digest,
                      dict(base, column=col, tau="" if tau is None else f"{tau:.6g}", monotone=int(mono)))
        for col, err, tau, mono, rt in out
    ]


def run_static_experiment(config):
    """All cells of the static table as :class:`MetricsRecord` objects.

    The noise variance of every (mask, downsampler) architecture is fixed at
    ``var(A f)/ratio`` for its ``2 x 2`` version and reused for larger
    blocks.  Cells that fail are recorded with ``nan`` RMSE and the error.
    """
    f = load_scene(config)
    if f.ndim != 2:
        raise ShapeError("static experiments need an image scene")
    n1, n2 = f.shape
    records = []
    ds = [math.isqrt(d) for d in config.d]
    for di, kind in enumerate(config.downsamplers):
        kind = canonical_kind(kind)
        for mi, fam in enumerate(config.masks):
            fam = fam.upper()
            sigma = 0.0
            mask = None
            try:
                mask = to_implementable(gen_mask(fam, n1, n2, 4, config.seed))
                if config.noisy:
                    A4 = Sensing(mask, Downsampler(kind, n1, n2, 2, 2, seed=config.seed))
                    sigma = math.sqrt(calibrate_noise(A4, f, config.noise_ratio))
            except CakeError as exc:
                log.warning("architecture %s/%s failed: %s", kind, fam, exc)
            for r in ds:
                base = {"downsampler": kind, "mask": fam, "d": r * r, "sigma2": f"{sigma**2:.9g}"}
                try:
                    if mask is None:
                        raise DomainError("mask construction failed")
                    t0 = time.perf_counter()
                    A = Sensing(mask, Downsampler(kind, n1, n2, r, r, seed=config.seed))
                    sys = _cell_system(A, f, sigma, config, (1, di, mi, r))
                    records += _static_records(sys, f, config, base, time.perf_counter() - t0)
                except (CakeError, ValueError, RuntimeError) as exc:
                    log.warning("cell %s failed: %s", base, exc)
                    records.append(MetricsRecord(f"{kind}/{fam}/d={r * r}/error", float("nan"), 0.0,
                                                 config.digest, dict(base, column="error", error=str(exc))))
    if config.conventional:
        records += _conventional_static(f, config, ds)
    return records


def _conventional_static(f, config, ds):
    n1, n2 = f.shape
    records = []
    C4 = block_mean_operator(n1, n2, 2, 2)
    sigma = math.sqrt(calibrate_noise(C4, f, config.noise_ratio)) if config.noisy else 0.0
    for r in ds:
        base = {"downsampler": "conventional", "mask": "none", "d": r * r, "sigma2": f"{sigma**2:.9g}"}
        t0 = time.perf_counter()
        C = block_mean_operator(n1, n2, r, r)
        y = add_noise(C.apply(f), sigma, config.seed, (2, r))
        for method in ("nearest", "cubic"):
            t1 = time.perf_counter()
            err = rmse(interpolate(y, method, r, r), f)
            records.append(MetricsRecord(f"conventional/none/d={r * r}/{method}", err,
                                         time.perf_counter() - t1, config.digest,
                                         dict(base, column=method, tau="", monotone=1)))
        sys = PreconditionedSystem(C, y)
        records += _static_records(sys, f, config, base, time.perf_counter() - t0)
    return records


# ---------------------------------------------------------------------------
# video experiment
# ---------------------------------------------------------------------------

def block_difference_codes(seq, B):
    """Difference codes applied independently inside each exposure block."""
    N = seq.masks.shape[0]
    D = difference_matrix(B)
    out = np.empty_like(seq.masks)
    for k in range(N // B):
        sub = type(seq)(seq.masks[k * B:(k + 1) * B], seq.form, seq.generator, seq.d)
        out[k * B:(k + 1) * B] = transform_mask_sequence(sub, D).masks
    return type(seq)(out, seq.form, seq.generator, seq.d, "difference")


def _implementable_codes(seq, config):
    from .masks import MaskSequence, _implementable_values

    masks = np.stack([_implementable_values(h) for h in seq.masks])
    out = MaskSequence(masks, "implementable", seq.generator, seq.d, seq.coding)
    if config.binarize:
        out = binarize_sequence(out, config.seed)
    return out


def video_codes(config, coding):
    n1, n2, N, B = config.n1, config.n2, config.N, config.B
    fam = config.masks[0].upper()
    seq = gen_mask_sequence(fam, n1, n2, config.d1 * config.d2, N, config.seed)
    if coding == "difference":
        seq = block_difference_codes(seq, B)
    elif coding != "independent":
        raise UnsupportedParameterError(f"unknown coding {coding!r}")
    return _implementable_codes(seq, config)


def inner_frames(N, B):
    """Frame indices excluding the first and last exposure blocks."""
    if N <= 2 * B:
        return np.arange(N)
    return np.arange(B, N - B)


def video_metrics(estimate, truth, B, roi=None):
    idx = inner_frames(truth.shape[0], B)
    full = rmse(estimate[idx], truth[idx])
    if roi is None:
        return full, None
    return full, rmse(estimate[idx][:, roi[0], roi[1]], truth[idx][:, roi[0], roi[1]])


def _video_sweep(A, y, truth, config):
    """Descending tau path with warm starts; keeps the best-RMSE solve."""
    sys = BlockPreconditionedSystem(A, y, config.B)
    inv = FrameCumsum(A.in_shape)
    center = config.tau_scale * float(np.max(np.abs(inv.adjoint(sys.A0.adjoint(sys.y0)))))
    grid = tau_grid(center, config.video_tau_points, config.video_tau_low, config.video_tau_high)[::-1]
    solver = replace(config.solver_config(init="zero"), tol=config.video_tol)
    best = None
    monotone = True
    idx = inner_frames(truth.shape[0], config.B)
    theta = None
    for tau in grid:
        tau_tv, tau_l1 = float(tau) * config.video_tau_ratio, float(tau)
        res = solve_video(A, y, tau_tv, tau_l1, config=solver, x0=theta)
        theta = res.coefficients
        monotone &= bool(np.all(np.diff(res.objective) <= 0))
        err = rmse(res.estimate[idx], truth[idx])
        if best is None or err < best[0]:
            best = (err, tau_tv, tau_l1, res)
    return best, monotone


def run_cake_experiment(config):
    """Keyed-exposure video table: coded captures versus conventional baselines."""
    f = as_video(load_scene(config))
    N, n1, n2 = f.shape
    if replace(config, N=N, n1=n1, n2=n2) != config:
        config = replace(config, N=N, n1=n1, n2=n2)
    B, d1, d2 = config.B, config.d1, config.d2
    roi = config.roi_slices()
    down = Downsampler(config.downsamplers[0], n1, n2, d1, d2, seed=config.seed)
    records = []
    sigma = 0.0
    if config.noisy:
        A_ref = CakeOperator(video_codes(config, "independent").masks, B, down)
        sigma = math.sqrt(calibrate_noise(A_ref, f, config.noise_ratio))
    base = {"B": B, "d1": d1, "d2": d2, "sigma2": f"{sigma**2:.9g}"}
    for ci, coding in enumerate(("independent", "difference")):
        t0 = time.perf_counter()
        try:
            A = CakeOperator(video_codes(config, coding).masks, B, down)
            y = add_noise(A.apply(f), sigma, config.seed, (3, ci))
            (err, tau_tv, tau_l1, res), mono = _video_sweep(A, y, f, config)
            full, roi_err = video_metrics(res.estimate, f, B, roi)
            extra = dict(base, method=f"cake-{coding}", roi_rmse="" if roi_err is None else f"{roi_err:.6f}",
                         tau_tv=f"{tau_tv:.6g}", tau_l1=f"{tau_l1:.6g}", monotone=int(mono))
            records.append(MetricsRecord(f"cake-{coding}", full, time.perf_counter() - t0, config.digest, extra))
        except (CakeError, ValueError, RuntimeError) as exc:
            log.warning("coding %s failed: %s", coding, exc)
            records.append(MetricsRecord(f"cake-{coding}", float("nan"), time.perf_counter() - t0, config.digest,
                                         dict(base, method=f"cake-{coding}", error=str(exc))))
    data = conventional_capture(f, d1, d2, B)
    if config.noisy:
        data = add_noise(data, math.sqrt(float(np.var(data)) / config.noise_ratio), config.seed, (4,))
    for method in ("nearest", "cubic"):
        t0 = time.perf_counter()
        est = interpolate(data, method, d1, d2, B)
        full, roi_err = video_metrics(est, f, B, roi)
        extra = dict(base, method=f"conventional-{method}", roi_rmse="" if roi_err is None else f"{roi_err:.6f}",
                     tau_tv="", tau_l1="", monotone=1)
        records.append(MetricsRecord(f"conventional-{method}", full, time.perf_counter() - t0, config.digest, extra))
    return records


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

STATIC_COLUMNS = ("cg-init", "l1-haar", "tv-aniso", "tv-iso", "nearest", "cubic")


def static_table(records):
    """Pivot static records into rows ``downsampler x mask x d``."""
    rows = {}
    order = []
    for r in records:
        e = r.extra
        key = (e["downsampler"], e["mask"], int(e["d"]))
        if key not in rows:
            rows[key] = {"downsampler": key[0], "mask": key[1], "d": key[2], "sigma2": e.get("sigma2", ""),
                         "config_digest": r.config_digest}
            order.append(key)
        col = e.get("column", "")
        if col == "error":
            rows[key]["error"] = e.get("error", "")
            continue
        rows[key][col] = f"{r.rmse_percent:.6f}"
        if e.get("tau"):
            rows[key][f"tau:{col}"] = e["tau"]
    return [rows[k] for k in sorted(order)]


def table_csv(rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({c: row.get(c, "") for c in columns})
    return buf.getvalue()


def static_csv(records, penalties=STATIC_PENALTIES):
    cols = ["downsampler", "mask", "d", "sigma2", "cg-init", *penalties, "nearest", "cubic"]
    cols += [f"tau:{p}" for p in penalties] + ["error", "config_digest"]
    return table_csv(static_table(records), cols)


def video_csv(records):
    cols = ["method", "B", "d1", "d2", "sigma2", "rmse_percent", "roi_rmse", "tau_tv", "tau_l1", "error",
            "config_digest"]
    rows = []
    for r in records:
        row = dict(r.extra)
        row["rmse_percent"] = f"{r.rmse_percent:.6f}"
        row["config_digest"] = r.config_digest
        rows.append(row)
    rows.sort(key=lambda row: row["method"])
    return table_csv(rows, cols)


def run_experiment(config):
    """Run the configured experiment; returns ``(records, csv_text)``."""
    if config.experiment == "static":
        records = run_static_experiment(config)
        return records, static_csv(records, config.penalties)
    records = run_cake_experiment(config)
    return records, video_csv(records)
