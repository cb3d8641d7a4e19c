"""Seeded random walks on the built-in groups, with desk-scale statistics.

Walks are generated from per-path derived seeds, so every statistic is
bit-reproducible for a fixed (config, seed) regardless of worker count:
path i always uses the same RNG stream, and all aggregations are either
sums, maxima, or quantiles over index-ordered results.

Paths are deliberately lightweight: a SamplePath stores its seed and
replays the walk on demand, keeping only dyadic-checkpoint summaries in
memory.  A 10^4-path ensemble at length 2^12 replays in well under a
minute per statistics pass.
"""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from . import relhyp as _rh
from .errors import DomainError, Inconclusive
from .morse import Verdict, _band_trend_fail
from .seeds import derive_seed
from .space import PathSeg, distances_along_path

PROB_TOL = 1e-12


# ---------------------------------------------------------------------------
# step measures

@dataclass(frozen=True)
class StepMeasure:
    """Finitely supported step distribution on group elements."""

    support: tuple  # of (element, probability)

    def __post_init__(self):
        if not self.support:
            raise DomainError("empty step measure")
        tot = 0.0
        for _, p in self.support:
            if p <= 0:
                raise DomainError(f"nonpositive probability {p}")
            tot += p
        if abs(tot - 1.0) > PROB_TOL:
            raise DomainError(f"probabilities sum to {tot}, not 1")

    @classmethod
    def uniform(cls, elements):
        els = list(elements)
        return cls(tuple((e, 1.0 / len(els)) for e in els))

    @classmethod
    def point_mass(cls, element):
        return cls(((element, 1.0),))


def uniform_generator_measure(sp):
    return StepMeasure.uniform(sp.gens)


def _step_letters(sp, mu):
    """Letter spelling of each support element (an element may be a word in
    the generators, e.g. a squared generator)."""
    out = []
    for e, p in mu.support:
        if e in sp.gens:
            out.append([e])
        else:
            seg = sp.geodesic(sp.identity, e)
            letters = seg.step_letters()
            if not letters:
                raise DomainError("identity element in step support")
            out.append(letters)
    return out


# ---------------------------------------------------------------------------
# sample paths

def _dyadic_checkpoints(n):
    ks = []
    k = 1
    while k <= n:
        ks.append(k)
        k *= 2
    if ks[-1] != n:
        ks.append(n)
    return ks


@dataclass
class PathStats:
    checkpoints: list          # sorted indices
    norms: dict                # k -> d(o, w_k)
    coned: dict                # k -> d_Ghat(o, w_k), relhyp spaces only
    max_peripheral: dict       # k -> sup_P d_P(o, w_k), relhyp spaces only


class SamplePath:
    """One walk, identified by its derived seed; replayed on demand."""

    def __init__(self, sp, mu, length, seed):
        if length < 1:
            raise DomainError(f"need length >= 1, got {length}")
        self.sp = sp
        self.mu = mu
        self.length = length
        self.seed = seed
        self._stats = None

    def _rng(self):
        import random
        return random.Random(self.seed)

    def _walk(self):
        """Yield (step index, accumulator) after each step, 1-based."""
        sp = self.sp
        rng = self._rng()
        letters = _step_letters(sp, self.mu)
        cum = []
        tot = 0.0
        for _, p in self.mu.support:
            tot += p
            cum.append(tot)
        acc = sp.right_acc(sp.identity)
        for k in range(1, self.length + 1):
            i = bisect.bisect_left(cum, rng.random())
            i = min(i, len(cum) - 1)
            for g in letters[i]:
                acc.push(g)
            yield k, acc
        self._final_acc = acc

    def positions_at(self, indices):
        """w_k for each requested index, in one replay."""
        want = set(indices)
        out = {}
        if 0 in want:
            out[0] = self.sp.identity
        for k, acc in self._walk():
            if k in want:
                out[k] = acc.value()
        missing = want - set(out)
        if missing:
            raise DomainError(f"indices beyond the path length: {sorted(missing)}")
        return out

    def stats(self):
        """Dyadic-checkpoint norms (and peripheral data on relhyp spaces)."""
        if self._stats is not None:
            return self._stats
        sp = self.sp
        ks = _dyadic_checkpoints(self.length)
        want = set(ks)
        relhyp = isinstance(sp, _rh.FreeProductSpace) and \
            bool(_rh.peripheral_indices(sp))
        pers = set(_rh.peripheral_indices(sp)) if relhyp else set()
        norms, coned, maxp = {}, {}, {}
        for k, acc in self._walk():
            if k not in want:
                continue
            norms[k] = acc.norm
            if relhyp:
                c = 0
                m = 0
                for i, e, nrm in acc.stack:
                    if i in pers:
                        c += 1
                        if nrm > m:
                            m = nrm
                    else:
                        c += nrm
                coned[k] = c
                maxp[k] = m
        self._stats = PathStats(checkpoints=ks, norms=norms, coned=coned,
                                max_peripheral=maxp)
        return self._stats


def sample_paths(sp, mu, n, count, seed):
    """`count` independent length-n walks; path i is seeded by a mix of
    (seed, i) so regeneration and parallel scheduling cannot reorder RNG
    streams."""
    if n < 1 or count < 1:
        raise DomainError("need n >= 1 and count >= 1")
    _step_letters(sp, mu)  # validate support against the space up front
    return [SamplePath(sp, mu, n, derive_seed(seed, i)) for i in range(count)]


def _stats_worker(path):
    return path.stats()


def ensemble_stats(paths, jobs=1):
    """PathStats for every path, index-ordered (identical for any jobs)."""
    if jobs <= 1:
        return [p.stats() for p in paths]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        stats = list(ex.map(_stats_worker, paths, chunksize=32))
    for p, s in zip(paths, stats):
        p._stats = s
    return stats


# ---------------------------------------------------------------------------
# drift and progress

@dataclass
class DriftReport:
    ell: float
    ci: tuple            # (lo, hi), 95% by batch means
    dyadic_means: list   # (n, mean of d(o,w_n)/n)
    subadditive: bool


def drift(paths, jobs=1, batches=30):
    """Escape-rate estimate at the final index with a batch-means CI and a
    subadditivity sanity check across dyadic prefixes."""
    if len(paths) < 30:
        raise DomainError(f"need >= 30 paths for a drift estimate, got {len(paths)}")
    stats = ensemble_stats(paths, jobs=jobs)
    n = paths[0].length
    finals = [s.norms[n] / n for s in stats]
    ell = sum(finals) / len(finals)
    b = max(2, min(batches, len(finals) // 2))
    size = len(finals) // b
    means = [sum(finals[i * size:(i + 1) * size]) / size for i in range(b)]
    mu = sum(means) / b
    var = sum((m - mu) ** 2 for m in means) / (b - 1)
    half = 1.96 * math.sqrt(var / b)
    ks = [k for k in stats[0].checkpoints]
    dyadic = [(k, sum(s.norms[k] for s in stats) / (len(stats) * k)) for k in ks]
    # expected subadditivity: E d(o,w_n)/n nonincreasing, up to sampling noise
    ok = all(b2 <= a2 * 1.05 + 0.05 for (_, a2), (_, b2) in zip(dyadic, dyadic[1:]))
    return DriftReport(ell=ell, ci=(ell - half, ell + half),
                       dyadic_means=dyadic, subadditive=ok)


def progress_tail(paths, ell, fraction, jobs=1):
    """Empirical P(d(o, w_n) < fraction * ell * n) per dyadic n, with a
    verdict that the log-probabilities decay linearly in n.

    The fitted slope of log p against n must be negative with its 95%
    interval excluding zero; zero counts are floored at half a path for
    the logarithm.  Diffusive walks (probability -> 1) fail.
    """
    if not 0 < fraction < 1:
        raise DomainError(f"need 0 < fraction < 1, got {fraction}")
    stats = ensemble_stats(paths, jobs=jobs)
    ks = stats[0].checkpoints
    rows = []
    for k in ks:
        bad = sum(1 for s in stats if s.norms[k] < fraction * ell * k)
        rows.append((k, bad / len(stats)))
    if all(p == 0.0 for _, p in rows):
        return rows, Verdict(True, test="progress_tail", margin=0.0,
                             parameters={"fraction": fraction, "ell": ell,
                                         "note": "no failures observed"})
    # fit from the first nonzero count up to (and including) the first zero
    # after it: leading zeros are vacuous small-n thresholds and the
    # trailing all-zero plateau would flatten the line
    start = next(i for i, (_, p) in enumerate(rows) if p > 0)
    fit_rows = []
    for k, p in rows[start:]:
        fit_rows.append((k, p))
        if p == 0.0:
            break
    floor = 0.5 / len(stats)
    xs = [k for k, _ in fit_rows]
    ys = [math.log(max(p, floor)) for _, p in fit_rows]
    nb = len(xs)
    if nb < 3:
        raise Inconclusive("too few dyadic checkpoints for a tail fit")
    xbar = sum(xs) / nb
    ybar = sum(ys) / nb
    sxx = sum((x - xbar) ** 2 for x in xs)
    slope = sum((x - xbar) * (y - ybar) for x, y in zip(xs, ys)) / sxx
    resid = [y - ybar - slope * (x - xbar) for x, y in zip(xs, ys)]
    se = math.sqrt(sum(r * r for r in resid) / max(nb - 2, 1) / sxx)
    passed = slope + 1.96 * se < 0
    return rows, Verdict(passed, test="progress_tail",
                         margin=-(slope + 1.96 * se),
                         parameters={"fraction": fraction, "ell": ell,
                                     "slope": slope, "se": se,
                                     "table": rows})


# ---------------------------------------------------------------------------
# peripheral statistics

def mann_kendall_increasing(seq):
    """One-sided Mann-Kendall p-value for an increasing trend."""
    n = len(seq)
    if n < 3:
        return 1.0
    S = 0
    for i in range(n):
        for j in range(i + 1, n):
            d = seq[j] - seq[i]
            S += (d > 0) - (d < 0)
    var = n * (n - 1) * (2 * n + 5) / 18.0
    if S > 0:
        z = (S - 1) / math.sqrt(var)
    elif S < 0:
        z = (S + 1) / math.sqrt(var)
    else:
        z = 0.0
    # one-sided upper tail of the standard normal
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _quantile(sorted_vals, q):
    if not sorted_vals:
        return 0.0
    i = min(len(sorted_vals) - 1, max(0, math.ceil(q * len(sorted_vals)) - 1))
    return sorted_vals[i]


def peripheral_projection_growth(paths, jobs=1, lo=2 ** 7, hi=2 ** 13,
                                 quantile=0.99, alpha=0.05):
    """0.99-quantile of sup_P d_P(o, w_n) per dyadic n, judged against log n.

    The verdict passes iff the quantile / log n sequence shows no
    increasing trend (one-sided Mann-Kendall sign test at level alpha).
    Walks trapped in one peripheral coset grow like the coset itself and
    fail.
    """
    sp = paths[0].sp
    _rh.require_relhyp(sp)
    stats = ensemble_stats(paths, jobs=jobs)
    ks = [k for k in stats[0].checkpoints if lo <= k <= hi and k >= 2]
    if not ks:
        raise DomainError(f"no dyadic checkpoints in [{lo}, {hi}]")
    rows = []
    ratios = []
    for k in ks:
        vals = sorted(s.max_peripheral[k] for s in stats)
        q = _quantile(vals, quantile)
        rows.append((k, q))
        ratios.append(q / math.log(k))
    p = mann_kendall_increasing(ratios)
    return rows, Verdict(p > alpha, test="peripheral_projection_growth",
                         margin=p - alpha,
                         parameters={"quantile": quantile, "ratios": ratios,
                                     "p_value": p, "table": rows})


# ---------------------------------------------------------------------------
# limit-ray proxies and tracking

@dataclass
class RayProxy:
    path_seg: PathSeg
    constants: tuple       # certified (q0, Q0) of the lift
    horizon: int
    stability: float       # coned deviation of the half-horizon proxy


def limit_ray_proxy(sp, path, N=None):
    """Finite-horizon stand-in for the limit ray of one walk.

    On relhyp spaces this is the lift of the coned geodesic [o, w_N]; on
    everything else, the geodesic to w_N (the two agree when peripherals
    are absent).  The stability field measures how far the half-horizon
    proxy strays from the full one: the coned length of its tail past the
    longest common normal-form prefix (0 when one extends the other).
    """
    N = N if N is not None else path.length
    pos = path.positions_at({N, N // 2})
    wN, wHalf = pos[N], pos[N // 2]
    relhyp = isinstance(sp, _rh.FreeProductSpace) and \
        bool(_rh.peripheral_indices(sp))
    if relhyp:
        if _rh.coned_dist(sp, (), wN) < 10:
            raise Inconclusive(
                f"walk did not progress in the coned graph (d_Ghat = "
                f"{_rh.coned_dist(sp, (), wN)} < 10)")
        report = _rh.coned_distance(sp, (), wN)
        seg, consts = _rh.lift_coned_geodesic(sp, report, start=sp.identity)
        j = 0
        while j < min(len(wN), len(wHalf)) and wN[j] == wHalf[j]:
            j += 1
        tail = wHalf[j:]
        # the divergent head syllables may still share a factor prefix
        stability = _rh.coned_dist(sp, (), tail)
        if j < min(len(wN), len(wHalf)) and wN[j][0] == wHalf[j][0]:
            stability -= 1
    else:
        seg = sp.geodesic(sp.identity, wN)
        consts = (1, 0)
        stability = float(distances_along_path(sp, wHalf, seg) and
                          min(distances_along_path(sp, wHalf, seg)))
    return RayProxy(path_seg=seg, constants=consts, horizon=N,
                    stability=max(0.0, float(stability)))


def tracking_profile(paths, proxies, jobs=1, threshold=0.05):
    """Distance from w_n to the proxy ray at dyadic n <= N/2, per path.

    Returns rows (n, median d/n, median d/log^2 n) and two verdicts: the
    d/n medians must fall below `threshold` by the last band, and the
    d/log^2 n medians must stay bounded across bands.
    """
    if len(paths) != len(proxies):
        raise DomainError("need one proxy per path")
    per_band = {}
    items = list(zip(paths, proxies))
    results = _map_jobs(_tracking_worker, items, jobs)
    for pairs in results:
        for n, d in pairs:
            per_band.setdefault(n, []).append(d)
    rows = []
    for n in sorted(per_band):
        ds = sorted(per_band[n])
        med = ds[len(ds) // 2]
        rows.append((n, med / n, med / max(math.log(n) ** 2, 1.0)))
    ratio_n = [r[1] for r in rows]
    v1 = Verdict(ratio_n[-1] <= threshold and ratio_n[-1] <= ratio_n[0] + 1e-9,
                 test="tracking_sublinear", margin=threshold - ratio_n[-1],
                 parameters={"medians": ratio_n})
    ratio_log2 = [r[2] for r in rows]
    v2 = Verdict(not _band_trend_fail(ratio_log2), test="tracking_log2",
                 margin=max(ratio_log2), parameters={"medians": ratio_log2})
    return rows, v1, v2


def _tracking_worker(item):
    path, proxy = item
    sp = path.sp
    N = proxy.horizon
    ks = [k for k in _dyadic_checkpoints(path.length) if k <= N // 2]
    pos = path.positions_at(ks)
    seg = proxy.path_seg
    seg_norms = seg.norms()
    out = []
    for k in ks:
        x = pos[k]
        # d(x, gamma) is realized before gamma's norm passes 2||x|| + 1
        cut = bisect.bisect_right(seg_norms, 2 * sp.norm(x) + 1)
        prefix = seg.prefix(max(cut, 2))
        out.append((k, min(distances_along_path(sp, x, prefix))))
    return out


def _map_jobs(fn, items, jobs):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=8))


# ---------------------------------------------------------------------------
# hitting statistics and walk-ray excursions

def _letter_name(g):
    """a, b, ... for positive free-group letters, A, B, ... for inverses."""
    (k,) = g
    return chr(ord("a") + k - 1) if k > 0 else chr(ord("A") - k - 1)


def direction_cell(sp, v):
    """Depth-1 shadow cell of an element: its first normal-form edge.

    Free-factor syllables are labelled by their first letter; peripheral
    syllables by their coset (all of which share the cell of the identity
    coset of that factor).  The identity falls in "other".
    """
    relhyp = isinstance(sp, _rh.FreeProductSpace)
    if relhyp:
        if not v:
            return "other"
        i, e = v[0]
        if i in _rh.peripheral_indices(sp):
            return f"P{i}"
        f = sp.factors[i]
        g = f.geodesic(f.identity, e).step_letters()[0]
        return f"f{i}:{_letter_name(g)}"
    if not v or sp.is_group is False:
        return "other"
    seg = sp.geodesic(sp.identity, v)
    letters = seg.step_letters()
    if not letters:
        return "other"
    g = letters[0]
    if len(g) == 1:  # free-group letter
        return _letter_name(g)
    return f"g:{g}"


def hitting_histogram(sp, paths, jobs=1):
    """Empirical distribution of proxy-ray initial cells; sums to 1."""
    items = [(sp, p) for p in paths]
    cells = _map_jobs(_hitting_worker, items, jobs)
    hist = {}
    for c in cells:
        hist[c] = hist.get(c, 0) + 1
    total = sum(hist.values())
    return {c: hist[c] / total for c in sorted(hist)}


def _hitting_worker(item):
    sp, path = item
    w = path.positions_at({path.length})[path.length]
    return direction_cell(sp, w)


def excursion_of_walk_ray(sp, paths, kappa, constants=None, jobs=1,
                          quantile=0.95, stability_factor=1.5):
    """Fitted excursion constants E_gamma of walk limit-ray proxies.

    Computes the excursion profile of each path's proxy at horizons N and
    N/2; the verdict passes iff the 0.95-quantile of E_gamma at the full
    horizon stays within `stability_factor` of the half-horizon quantile
    (so doubling the horizon does not inflate excursions).
    """
    _rh.require_relhyp(sp)
    constants = constants if constants is not None else _rh.default_constants(sp)
    items = [(sp, p, kappa, constants) for p in paths]
    results = _map_jobs(_excursion_worker, items, jobs)
    full = sorted(r[0] for r in results)
    half = sorted(r[1] for r in results)
    qf = _quantile(full, quantile)
    qh = _quantile(half, quantile)
    passed = qf <= qh * stability_factor + 1e-9
    return full, Verdict(passed, test="walk_ray_excursion",
                         margin=qh * stability_factor - qf,
                         parameters={"quantile": quantile, "q_full": qf,
                                     "q_half": qh, "kappa": kappa.tag})


def _excursion_worker(item):
    sp, path, kappa, constants = item
    out = []
    for N in (path.length, path.length // 2):
        pos = path.positions_at({N})[N]
        report = _rh.coned_distance(sp, (), pos)
        seg, _ = _rh.lift_coned_geodesic(sp, report, start=sp.identity)
        _, E, _ = _rh.excursion_profile(sp, seg, constants.D0, kappa)
        out.append(E)
    return tuple(out)


# ---------------------------------------------------------------------------
# CSV emission

def _write_csv(fh, header_cols, rows):
    from . import csv_header
    fh.write(csv_header() + "\n")
    fh.write(",".join(header_cols) + "\n")
    for row in rows:
        fh.write(",".join(str(c) for c in row) + "\n")


def write_walk_stats_csv(path, paths, jobs=1):
    """walk_stats.csv: one row per (path, dyadic n)."""
    stats = ensemble_stats(paths, jobs=jobs)
    rows = []
    for i, s in enumerate(stats):
        for k in s.checkpoints:
            rows.append((i, k, s.norms[k], s.coned.get(k, "")))
    with open(path, "w") as fh:
        _write_csv(fh, ("path_id", "n", "dist", "coned_dist"), rows)


def write_excursion_csv(path, sp, gamma, D0, kappa):
    rows_raw, _, _ = _rh.excursion_profile(sp, gamma, D0, kappa)
    rows = [(f"P{c.factor}@{_rh.coned_norm(sp, c.rep)}", exc, cn, f"{ratio:.6f}")
            for c, exc, cn, ratio in rows_raw]
    with open(path, "w") as fh:
        _write_csv(fh, ("coset_id", "excursion", "coned_norm", "ratio"), rows)


def write_tracking_csv(path, rows):
    with open(path, "w") as fh:
        _write_csv(fh, ("n", "ratio_n", "ratio_log2"),
                   [(n, f"{a:.6f}", f"{b:.6f}") for n, a, b in rows])
