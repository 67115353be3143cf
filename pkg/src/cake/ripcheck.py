"""Restricted-isometry diagnostics on small instances.

* :func:`gram` and :func:`cake_gram` materialise ``A`` and summarise
  ``G = A^T A`` by its largest diagonal deviation ``d_hat`` and largest
  off-diagonal magnitude ``o_hat``.
* :func:`gershgorin_bound` turns those into ``d_hat + (s - 1) o_hat``, an
  upper bound on ``delta_s`` from the disc theorem.
* :func:`exact_delta_s` enumerates every size-``s`` support.
* :func:`hoeffding_tail_check` compares Monte Carlo tail frequencies of Gram
  entries with the concentration bounds for binary masks under subsampling.
"""

from __future__ import annotations

import contextlib
import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import CapacityError, DomainError, ShapeError, trial_seed
from .masks import gen_mask_sequence, gen_spatial_mask
from .operators import CakeOperator, LinearOperator, materialize, sensing_matrix_direct

MAX_RETAINED = 2048
MAX_SUPPORTS = 10**6
MAX_S = 8


@dataclass
class GramReport:
    n: int
    m: int
    B: int
    d_hat: float
    o_hat: float
    G: np.ndarray | None = None
    block_o_hat: np.ndarray | None = None  # (B, B) max |entry| of A_k^T A_l, diagonal excluded


@dataclass
class RIPEstimate:
    s: int
    delta: float | None = None  # exact, when enumerated
    bound: float | None = None  # Gershgorin
    method: str = "gershgorin"

    def consistent(self, tol=1e-12):
        return self.delta is None or self.bound is None or self.delta <= self.bound + tol


def _report_from_gram(G, m, B=1):
    nB = G.shape[0]
    diag = np.diag(G)
    off = np.abs(G - np.diag(diag))
    block = None
    if B > 1:
        n = nB // B
        block = off.reshape(B, n, B, n).max(axis=(1, 3))
    return GramReport(
        n=nB // B,
        m=m,
        B=B,
        d_hat=float(np.max(np.abs(diag - 1.0))),
        o_hat=float(off.max()) if nB > 1 else 0.0,
        G=G if nB <= MAX_RETAINED else None,
        block_o_hat=block,
    )


def _dense(A):
    if isinstance(A, LinearOperator):
        return materialize(A)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError("dense sensing matrix must be 2-D")
    return A


def gram_matrix(A):
    M = _dense(A)
    G = M.T @ M
    return 0.5 * (G + G.T)


def gram(A):
    """Gram summary of an operator (materialised) or a dense matrix."""
    M = _dense(A)
    if M.shape[1] > MAX_RETAINED:
        raise CapacityError(f"{M.shape[1]} columns exceed the Gram limit of {MAX_RETAINED}")
    G = M.T @ M
    return _report_from_gram(0.5 * (G + G.T), M.shape[0])


def gershgorin_bound(report, s):
    """``delta_s <= d_hat + (s - 1) o_hat``."""
    s = int(s)
    if s < 1:
        raise DomainError("sparsity must be at least 1")
    return RIPEstimate(s, None, report.d_hat + (s - 1) * report.o_hat, "gershgorin")


def _supports(ncols, s):
    count = math.comb(ncols, s)
    if count > MAX_SUPPORTS:
        raise CapacityError(f"C({ncols}, {s}) = {count} supports exceed {MAX_SUPPORTS}")
    return count


def exact_delta_s(A, s, chunk=20000):
    """Exact ``delta_s = max_S max |eig(A_S^T A_S) - 1|`` over all ``|S| = s``.

    ``A`` is a dense matrix or an operator (materialised).
    """
    s = int(s)
    if not 1 <= s <= MAX_S:
        raise DomainError(f"sparsity must lie in [1, {MAX_S}]")
    G = gram_matrix(A)
    ncols = G.shape[0]
    if s > ncols:
        raise DomainError("sparsity exceeds the number of columns")
    _supports(ncols, s)
    worst = 0.0
    combos = itertools.combinations(range(ncols), s)
    while True:
        idx = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if idx.size == 0:
            break
        sub = G[idx[:, :, None], idx[:, None, :]]
        ev = np.linalg.eigvalsh(sub)
        worst = max(worst, float(np.max(np.abs(ev - 1.0))))
    return RIPEstimate(s, worst, None, "exact-enumeration")


def rip_profile(A, s_values):
    """Exact and Gershgorin estimates for each ``s``; one :class:`RIPEstimate` each."""
    report = gram(A)
    out = []
    for s in s_values:
        est = exact_delta_s(A, s)
        est.bound = gershgorin_bound(report, s).bound
        out.append(est)
    return report, out


# ---------------------------------------------------------------------------
# Gram entries from the explicit sum
# ---------------------------------------------------------------------------

def gram_entry_direct(h, d1, d2, p, q):
    """``G[p, q]`` for subsampled convolution, summed term by term.

    ``p`` and ``q`` are ``(row, col)`` pixel positions (0-based); the sum
    runs over the retained detector samples ``(l1, l2)`` of
    ``h[l1 d1 - p1, l2 d2 - p2] * h[l1 d1 - q1, l2 d2 - q2]`` (indices mod n).
    """
    h = np.asarray(getattr(h, "values", h), dtype=np.float64)
    n1, n2 = h.shape
    total = 0.0
    for l1 in range(n1 // d1):
        for l2 in range(n2 // d2):
            a = h[(l1 * d1 - p[0]) % n1, (l2 * d2 - p[1]) % n2]
            b = h[(l1 * d1 - q[0]) % n1, (l2 * d2 - q[1]) % n2]
            total += a * b
    return total


def dependency_class(p, q, d1, d2):
    """Classify a Gram entry by how its summands share mask coefficients.

    ``diagonal`` for ``p == q``; ``dependent`` when both coordinate offsets
    are multiples of the block size (the two index sets coincide); otherwise
    ``independent`` (every summand uses distinct coefficients).
    """
    if tuple(p) == tuple(q):
        return "diagonal"
    if (p[0] - q[0]) % d1 == 0 and (p[1] - q[1]) % d2 == 0:
        return "dependent"
    return "independent"


def representative_pairs(n1, n2, d1, d2, per_class=3):
    """A few ``(p, q)`` pixel pairs from each dependency class, deterministic."""
    pairs = {"diagonal": [], "independent": [], "dependent": []}
    cands = [((0, 0), (0, 0)), ((n1 // 2, n2 // 3), (n1 // 2, n2 // 3))]
    cands += [((0, 0), (1, 0)), ((0, 0), (0, 1)), ((1, 2), (2, 5 % n2))]
    cands += [((0, 0), (d1 % n1, 0)), ((0, 0), (0, d2 % n2)), ((1, 1), ((1 + d1) % n1, (1 + d2) % n2))]
    for p, q in cands:
        cls = dependency_class(p, q, d1, d2)
        if len(pairs[cls]) < per_class and (p, q) not in pairs[cls]:
            pairs[cls].append((p, q))
    return pairs


def tail_bound(cls, n, d, delta, s=1):
    """Concentration bound on ``P(|G_qq - 1| >= delta)`` or ``P(|G_pq| >= delta/s)``."""
    if cls == "diagonal":
        return 2.0 * math.exp(-2.0 * n * delta**2 / d)
    if cls == "independent":
        return 2.0 * math.exp(-n * delta**2 / (2.0 * d * s**2))
    if cls == "dependent":
        return 4.0 * math.exp(-n * delta**2 / (4.0 * d * s**2))
    raise DomainError(f"unknown dependency class {cls!r}")


@dataclass
class TailRow:
    cls: str
    p: tuple
    q: tuple
    threshold: float
    empirical: float
    bound: float
    se: float

    @property
    def passed(self):
        return self.empirical <= self.bound + 3.0 * self.se


def _block_dims(d):
    r = int(round(math.isqrt(d)))
    if r * r == d:
        return r, r
    return d, 1


def monte_carlo_grams(dist, n1, n2, d1, d2, trials, seed):
    """Stack of ``trials`` Gram matrices of theoretical masks under subsampling."""
    n, d = n1 * n2, d1 * d2
    grams = np.empty((trials, n, n))
    for k in range(trials):
        h = gen_spatial_mask(dist, n1, n2, d, trial_seed(seed, k)).values
        M = sensing_matrix_direct(h, d1, d2)
        grams[k] = M.T @ M
    return grams


def hoeffding_tail_check(dist, n1, n2, d1, d2, delta, trials, s=1, seed=0, grams=None):
    """Empirical Gram-entry tails against the concentration bounds.

    For representative pairs of every dependency class, reports the fraction
    of ``trials`` masks with ``|G_qq - 1| >= delta`` (diagonal) or
    ``|G_pq| >= delta / s`` (off-diagonal), next to the bound and the
    binomial standard error computed from the bound.
    """
    trials = int(trials)
    if trials < 1000:
        raise DomainError("tail checks need at least 1000 trials")
    n, d = n1 * n2, d1 * d2
    if grams is None:
        grams = monte_carlo_grams(dist, n1, n2, d1, d2, trials, seed)
    rows = []
    for cls, pairs in representative_pairs(n1, n2, d1, d2).items():
        for p, q in pairs:
            i, j = p[0] * n2 + p[1], q[0] * n2 + q[1]
            vals = grams[:, i, j]
            if cls == "diagonal":
                thr = delta
                hits = np.abs(vals - 1.0) >= thr
            else:
                thr = delta / s
                hits = np.abs(vals) >= thr
            bound = tail_bound(cls, n, d, delta, s)
            pb = min(1.0, bound)
            se = math.sqrt(pb * (1.0 - pb) / trials)
            rows.append(TailRow(cls, p, q, thr, float(hits.mean()), bound, se))
    return rows


def cake_gram(masks, down, s=None):
    """Gram summary of one keyed-exposure block ``[A_1 ... A_B]``.

    Returns the report and, when ``s`` is given, an estimate carrying both
    the Gershgorin bound and the exact value (if enumerable).
    """
    seq = getattr(masks, "masks", masks)
    B = seq.shape[0]
    op = CakeOperator(seq, B, down)
    if op.in_dim > MAX_RETAINED:
        raise CapacityError(f"nB = {op.in_dim} exceeds {MAX_RETAINED}")
    M = materialize(op)
    G = M.T @ M
    report = _report_from_gram(0.5 * (G + G.T), M.shape[0], B)
    if s is None:
        return report, None
    est = gershgorin_bound(report, s)
    try:
        exact = exact_delta_s(M, s)
        est.delta, est.method = exact.delta, "exact-enumeration"
    except CapacityError:
        pass
    return report, est


def mean_cake_gram(family, n1, n2, d1, d2, B, trials, seed):
    """Average Gram of independent keyed-exposure blocks over ``trials`` draws."""
    from .operators import Downsampler

    down = Downsampler("subsample", n1, n2, d1, d2)
    acc = None
    entries = []
    for k in range(trials):
        seq = gen_mask_sequence(family, n1, n2, d1 * d2, B, trial_seed(seed, k))
        M = materialize(CakeOperator(seq.masks, B, down))
        G = M.T @ M
        acc = G if acc is None else acc + G
        entries.append(G)
    return acc / trials, np.stack(entries)


@contextlib.contextmanager
def _sink(target):
    """Open ``target`` for writing unless it is already a text stream."""
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh


def write_tail_csv(path, rows):
    with _sink(path) as fh:
        w = csv.writer(fh)
        w.writerow(["class", "p", "q", "threshold", "empirical", "bound", "se", "passed"])
        for r in rows:
            w.writerow([r.cls, f"{r.p[0]}:{r.p[1]}", f"{r.q[0]}:{r.q[1]}", f"{r.threshold:.6g}",
                        f"{r.empirical:.6g}", f"{r.bound:.6g}", f"{r.se:.6g}", int(r.passed)])


def write_rip_csv(path, estimates, report=None):
    with _sink(path) as fh:
        w = csv.writer(fh)
        w.writerow(["s", "delta_s", "gershgorin", "method", "d_hat", "o_hat"])
        for e in estimates:
            w.writerow([
                e.s,
                "" if e.delta is None else f"{e.delta:.12g}",
                "" if e.bound is None else f"{e.bound:.12g}",
                e.method,
                "" if report is None else f"{report.d_hat:.12g}",
                "" if report is None else f"{report.o_hat:.12g}",
            ])
