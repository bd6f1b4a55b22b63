"""Multi-class likelihood, Fisher information, and list-mode MLEM.

Per class k with events y_1..y_N, system model A_j(y) and sensitivities
s_j, the log-likelihood is

    l = sum_n ln( sum_j A_j(y_n) lambda_j )  -  N ln( sum_j lambda_j s_j )

and the total over classes is the plain sum of the per-class values.  The
multiplicative update iterated by ``reconstruct`` is

    lambda_j <- lambda_j / (sum_k s_j^k)
                * sum_k sum_n A_j^k(y_n^k) / (sum_j' A_j'^k lambda_j' + eps_n^k)

with the class sums restricted to the selected subset in both the
numerator and the sensitivity denominator.  Voxels whose subset
sensitivity is zero are frozen at zero.

The logged likelihood is the conditional (given class counts) form above,
while the update is the EM iteration of the underlying Poisson model: it
always ascends the unconditional objective sum_n ln(A.lambda) - lambda.S,
and provably ascends the displayed value for a single-class subset.  With
several classes the displayed value can dip while the Poisson objective
still rises, a direct consequence of the missing mu-term in the displayed
form.

The per-class Fisher information is estimated by Monte Carlo as

    I^k = N^k * [ mean_n outer(a_n, a_n) - outer(s~, s~) ]

where a_n = A(y_n) / (A(y_n) . lambda) and s~ = s / (lambda . s); the
subtraction happens per event, so the J = 1 estimate cancels exactly and
symmetry is exact by construction.

Event-list arguments may everywhere be replaced by dense (N, J) arrays of
precomputed A values, which is how the discretized toy problems in the
test-suite drive the same code paths.

Summation conventions (fixed for reproducibility): per-event terms are
evaluated in event order and reduced with numpy's pairwise summation;
event-chunk partials and class contributions accumulate sequentially in
subset order, so results never depend on the worker-thread count.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._accel import njit, prange
from .simulate import CLASS_TAGS, run_simulation
from .sysmodel import SensitivityMap, flatten_events, iter_event_rows

logger = logging.getLogger(__name__)

MAX_DENSE_FISHER_VOXELS = 4096


@dataclass
class ActivityImage:
    """Voxelized non-negative emission-rate map over a grid."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.grid.n_voxels:
            raise ValueError("image array does not match the grid")
        if np.any(v < 0):
            raise ValueError("activity values must be non-negative")
        self.values = v

    @classmethod
    def uniform(cls, grid, value=1.0):
        return cls(grid, np.full(grid.n_voxels, float(value)))


@dataclass(frozen=True)
class BackgroundModel:
    """Constant per-class additive background eps^k for the EM denominator;
    per-event values in the event file override the class constant."""

    eps: dict = field(default_factory=dict)

    def __post_init__(self):
        for tag, v in self.eps.items():
            if tag not in CLASS_TAGS:
                raise ValueError(f"unknown class tag {tag!r} in background model")
            if v < 0:
                raise ValueError("background terms must be non-negative")

    @classmethod
    def constant(cls, value):
        return cls({tag: float(value) for tag in CLASS_TAGS})

    def value_for(self, tag):
        return float(self.eps.get(tag, 0.0))


@dataclass
class FisherMatrix:
    """Monte-Carlo estimate of one class's information matrix.

    ``matrix`` is the J x J estimate with prefactor ``n_events``;
    ``se_matrix`` the per-entry MC standard error.  ``backprojection_mean``
    and ``backprojection_se`` are the mean and standard error of the
    normalized backprojection a_n, retained because I @ lambda reduces to
    n_events * (mean(a) - s_tilde) and tests bound it by its MC error.
    """

    class_tag: str
    matrix: np.ndarray
    n_events: int
    mc_samples: int
    se_matrix: np.ndarray
    backprojection_mean: np.ndarray
    backprojection_se: np.ndarray
    s_tilde: np.ndarray


# ---------------------------------------------------------------------------
# jitted cores


@njit(cache=True, parallel=True)
def _forward_rows(rows, lam, eps, out):
    for i in prange(rows.shape[0]):
        s = 0.0
        for j in range(rows.shape[1]):
            s += rows[i, j] * lam[j]
        out[i] = s + eps[i]


@njit(cache=True)
def _accumulate_rows(rows, forward, acc):
    """acc_j += sum_i rows[i, j] / forward[i]; returns #excluded (zero
    denominator) events.  Sequential accumulation keeps the result
    independent of threading."""
    excluded = 0
    for i in range(rows.shape[0]):
        f = forward[i]
        if f > 0.0:
            for j in range(rows.shape[1]):
                acc[j] += rows[i, j] / f
        else:
            excluded += 1
    return excluded


@njit(cache=True)
def _normalized_backprojections(rows, lam, out):
    """a_n = A(y_n)/(A(y_n).lambda), computed as (w/W)/lambda with
    w = A*lambda so that the J = 1 case gives exactly fl(1/lambda).
    Returns the number of rows with zero forward projection (skipped)."""
    skipped = 0
    m, nj = rows.shape
    for i in range(m):
        w_sum = 0.0
        for j in range(nj):
            w_sum += rows[i, j] * lam[j]
        if w_sum <= 0.0:
            skipped += 1
            for j in range(nj):
                out[i, j] = np.nan
            continue
        for j in range(nj):
            if lam[j] > 0.0:
                out[i, j] = (rows[i, j] * lam[j] / w_sum) / lam[j]
            else:
                out[i, j] = rows[i, j] / w_sum
    return skipped


@njit(cache=True, parallel=True)
def _fisher_accumulate(a_batch, s_tilde, m2, sq, bp_sum, bp_sq):
    """Accumulate per-event contributions outer(a,a) - outer(s~,s~).

    The subtraction is per event, so identical terms cancel exactly.  Rows
    of the matrix are independent, which makes the prange safe and the
    result thread-count invariant."""
    m, nj = a_batch.shape
    for i in prange(nj):
        sti = s_tilde[i]
        for j in range(nj):
            stij = sti * s_tilde[j]
            acc = 0.0
            accq = 0.0
            for n in range(m):
                v = a_batch[n, i] * a_batch[n, j] - stij
                acc += v
                accq += v * v
            m2[i, j] += acc
            sq[i, j] += accq
        s1 = 0.0
        s2 = 0.0
        for n in range(m):
            s1 += a_batch[n, i]
            s2 += a_batch[n, i] * a_batch[n, i]
        bp_sum[i] += s1
        bp_sq[i] += s2


# ---------------------------------------------------------------------------
# argument plumbing


def _lam_values(lam):
    return lam.values if isinstance(lam, ActivityImage) else np.asarray(lam, dtype=np.float64)


def _grid_of(lam, sens):
    if isinstance(lam, ActivityImage):
        return lam.grid
    if isinstance(sens, SensitivityMap):
        return sens.grid
    return None


def _sens_vector(sens, tag):
    if isinstance(sens, SensitivityMap):
        return sens.values[tag]
    if isinstance(sens, dict):
        return np.asarray(sens[tag], dtype=np.float64)
    return np.asarray(sens, dtype=np.float64)


def _class_of_events(events):
    if isinstance(events, np.ndarray):
        return None
    tags = {ev.class_tag for ev in events}
    if len(tags) > 1:
        raise ValueError(f"events of mixed classes passed to a per-class routine: {sorted(tags)}")
    return next(iter(tags)) if tags else None


def _iter_rows(events, grid, kernels):
    """Yield (i0, rows, eps_override) blocks for list or dense inputs."""
    if isinstance(events, np.ndarray):
        rows = np.ascontiguousarray(events, dtype=np.float64)
        yield 0, rows, np.full(rows.shape[0], np.nan)
        return
    if grid is None:
        raise ValueError("a grid is required to evaluate kernels for event lists")
    if kernels is None:
        raise ValueError("kernel parameters are required for event lists")
    flat = flatten_events(events, kernels)
    for i0, rows in iter_event_rows(flat, grid, kernels):
        yield i0, rows, flat.eps[i0 : i0 + rows.shape[0]]


def group_events(events):
    """Group a mixed event list by class tag."""
    if isinstance(events, dict):
        return events
    out = {}
    for ev in events:
        out.setdefault(ev.class_tag, []).append(ev)
    return out


def _n_events(events):
    return events.shape[0] if isinstance(events, np.ndarray) else len(events)


# ---------------------------------------------------------------------------
# likelihood


def class_log_likelihood(events, lam, sens, kernels=None, diagnostics=None):
    """Per-class log-likelihood (see module docstring).

    Events whose forward projection is zero are excluded from both sums and
    counted in ``diagnostics['n_excluded']``.  An empty event list gives 0.
    """
    n = _n_events(events)
    if n == 0:
        return 0.0
    tag = _class_of_events(events)
    if tag is None and isinstance(sens, (dict, SensitivityMap)):
        raise ValueError("dense event rows need the class's sensitivity vector, not a map")
    sens_k = _sens_vector(sens, tag)
    lam_v = _lam_values(lam)
    mu = float(np.sum(lam_v * sens_k))
    if mu <= 0.0:
        raise ValueError("expected detection rate (lambda . s) must be positive")
    grid = _grid_of(lam, sens)

    forward = np.empty(n)
    zero_eps = np.zeros(0)
    for i0, rows, _ in _iter_rows(events, grid, kernels):
        m = rows.shape[0]
        eps = zero_eps if m == 0 else np.zeros(m)
        _forward_rows(rows, lam_v, eps, forward[i0 : i0 + m])

    positive = forward > 0.0
    n_excluded = int(n - np.count_nonzero(positive))
    if n_excluded and diagnostics is not None:
        diagnostics["n_excluded"] = diagnostics.get("n_excluded", 0) + n_excluded
    if n_excluded:
        logger.warning("%d events with zero forward projection excluded", n_excluded)
    n_used = n - n_excluded
    if n_used == 0:
        return 0.0
    return float(np.sum(np.log(forward[positive])) - n_used * math.log(mu))


def total_log_likelihood(events_by_class, lam, sens, kernels=None, class_subset=None, diagnostics=None):
    """Sum of per-class log-likelihoods over the selected subset, in the
    subset's order."""
    if class_subset is None:
        class_subset = [t for t in CLASS_TAGS if t in events_by_class]
    total = 0.0
    for tag in class_subset:
        if tag not in CLASS_TAGS:
            raise ValueError(f"unknown class tag {tag!r}")
        ev = events_by_class.get(tag)
        if ev is None or _n_events(ev) == 0:
            continue
        total += class_log_likelihood(ev, lam, _sens_vector(sens, tag), kernels, diagnostics)
    return total


# ---------------------------------------------------------------------------
# MLEM


def mlem_step(lam, events_by_class, sens, background=None, kernels=None, class_subset=None, diagnostics=None):
    """One multiplicative update (module docstring); returns the new image
    as a bare array (or ActivityImage, matching the input type)."""
    lam_v = _lam_values(lam)
    if not np.any(lam_v > 0):
        raise ValueError("MLEM input image must be non-negative and non-zero")
    if class_subset is None:
        class_subset = [t for t in CLASS_TAGS if t in events_by_class]
    class_subset = list(class_subset)
    if not class_subset:
        raise ValueError("class subset must not be empty")
    for tag in class_subset:
        if tag not in CLASS_TAGS:
            raise ValueError(f"unknown class tag {tag!r}")
    if background is None:
        background = BackgroundModel()

    subset_sens = np.zeros_like(lam_v)
    for tag in class_subset:
        subset_sens = subset_sens + _sens_vector(sens, tag)
    active = subset_sens > 0.0

    grid = _grid_of(lam, sens)
    acc = np.zeros_like(lam_v)
    for tag in class_subset:
        events = events_by_class.get(tag)
        if events is None or _n_events(events) == 0:
            continue
        eps_k = background.value_for(tag)
        excluded = 0
        for i0, rows, eps_over in _iter_rows(events, grid, kernels):
            m = rows.shape[0]
            eps = np.where(np.isnan(eps_over), eps_k, eps_over)
            forward = np.empty(m)
            _forward_rows(rows, lam_v, eps, forward)
            excluded += _accumulate_rows(rows, forward, acc)
        if excluded and diagnostics is not None:
            diagnostics[tag] = diagnostics.get(tag, 0) + excluded

    out = np.zeros_like(lam_v)
    out[active] = lam_v[active] * acc[active] / subset_sens[active]
    if isinstance(lam, ActivityImage):
        return ActivityImage(lam.grid, out)
    return out


@dataclass
class ReconstructionResult:
    image: ActivityImage
    loglik: list
    diagnostics: list


def reconstruct(
    events,
    sens,
    kernels=None,
    background=None,
    class_subset=None,
    iterations=30,
    initial=None,
    early_stop=False,
    tolerance=1e-7,
):
    """Run LM-MLEM from a uniform (or given) initial image, recording the
    total log-likelihood per iteration; optional early stop on relative
    gain below ``tolerance``."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    events_by_class = group_events(events)
    if class_subset is None:
        class_subset = [t for t in CLASS_TAGS if t in events_by_class]
    class_subset = list(class_subset)
    n_total = sum(_n_events(events_by_class.get(t, [])) for t in class_subset)
    if n_total == 0:
        raise ValueError("no events in the selected classes; nothing to reconstruct")

    grid = sens.grid if isinstance(sens, SensitivityMap) else None
    if initial is None:
        if grid is None:
            raise ValueError("an initial image is required without a sensitivity map grid")
        lam = ActivityImage.uniform(grid, 1.0)
    else:
        lam = initial

    logliks = [total_log_likelihood(events_by_class, lam, sens, kernels, class_subset)]
    diags = []
    for _ in range(iterations):
        step_diag = {}
        lam = mlem_step(lam, events_by_class, sens, background, kernels, class_subset, step_diag)
        logliks.append(total_log_likelihood(events_by_class, lam, sens, kernels, class_subset))
        diags.append(step_diag)
        if early_stop and len(logliks) >= 2:
            prev, cur = logliks[-2], logliks[-1]
            if abs(cur - prev) <= tolerance * max(1.0, abs(prev)):
                break
    if not isinstance(lam, ActivityImage) and grid is not None:
        lam = ActivityImage(grid, lam)
    return ReconstructionResult(lam, logliks, diags)


# ---------------------------------------------------------------------------
# Fisher information


def fisher_from_rows(class_tag, rows, lam, sens_k, n_events=None, batch=4096):
    """Fisher estimate from dense A rows of accepted class-k events.

    ``n_events`` is the N^k prefactor and defaults to the row count (the
    estimate scales linearly with it)."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    n, nj = rows.shape
    if n < 1:
        raise ValueError("at least one event row is required")
    lam_v = _lam_values(lam)
    sens_k = np.asarray(sens_k, dtype=np.float64)
    mu = float(np.sum(lam_v * sens_k))
    if mu <= 0.0:
        raise ValueError("expected detection rate (lambda . s) must be positive")
    s_tilde = np.where(lam_v > 0.0, (lam_v * sens_k / mu) / np.where(lam_v > 0, lam_v, 1.0), sens_k / mu)

    m2 = np.zeros((nj, nj))
    sq = np.zeros((nj, nj))
    bp_sum = np.zeros(nj)
    bp_sq = np.zeros(nj)
    a_buf = np.empty((min(batch, n), nj))
    used = 0
    for i0 in range(0, n, batch):
        blk = rows[i0 : i0 + batch]
        a = a_buf[: blk.shape[0]]
        skipped = _normalized_backprojections(blk, lam_v, a)
        if skipped:
            keep = ~np.isnan(a[:, 0])
            a = np.ascontiguousarray(a[keep])
        used += a.shape[0]
        if a.shape[0]:
            _fisher_accumulate(a, s_tilde, m2, sq, bp_sum, bp_sq)
    if used == 0:
        raise ValueError("all events had zero forward projection")
    if used != n:
        logger.warning("%d fisher events skipped (zero forward projection)", n - used)

    n_ev = used if n_events is None else int(n_events)
    scale = n_ev / used
    matrix = m2 * scale
    mean_sq = (m2 / used) ** 2
    var = np.maximum(sq / used - mean_sq, 0.0)
    se_matrix = n_ev * np.sqrt(var / used)
    bp_mean = bp_sum / used
    bp_var = np.maximum(bp_sq / used - bp_mean**2, 0.0)
    bp_se = np.sqrt(bp_var / used)
    return FisherMatrix(
        class_tag=class_tag,
        matrix=matrix,
        n_events=n_ev,
        mc_samples=used,
        se_matrix=se_matrix,
        backprojection_mean=bp_mean,
        backprojection_se=bp_se,
        s_tilde=s_tilde,
    )


def _fisher_guard(grid, allow_large):
    if grid.n_voxels > MAX_DENSE_FISHER_VOXELS and not allow_large:
        raise ValueError(
            f"dense Fisher estimation is guarded at J <= {MAX_DENSE_FISHER_VOXELS} "
            f"voxels (grid has {grid.n_voxels}); pass allow_large=True to override"
        )


def _collect_class_rows(
    tags, lam_image, det, params, kernels, seed, window_fraction, toy,
    stop_counts, max_decays, batch_decays=65536,
):
    """Simulate decays from the activity image and gather dense A rows per
    class until each tag reaches its target count (or decays run out)."""
    grid = lam_image.grid
    rows_by_tag = {t: [] for t in tags}
    done = 0
    while done < max_decays and any(
        sum(r.shape[0] for r in rows_by_tag[t]) < stop_counts[t] for t in tags
    ):
        n = min(batch_decays, max_decays - done)
        res = run_simulation(
            grid, lam_image.values, n, det, params, seed,
            window_fraction=window_fraction, toy=toy, collect=True, keep_truth=False,
            first_index=done, stream_domain=rng.DOMAIN_FISHER,
        )
        by_class = group_events(res.events)
        for t in tags:
            need = stop_counts[t] - sum(r.shape[0] for r in rows_by_tag[t])
            ev = by_class.get(t, [])
            if need > 0 and ev:
                ev = ev[:need] if len(ev) > need else ev
                for _, rows, _eps in _iter_rows(ev, grid, kernels):
                    rows_by_tag[t].append(rows.copy())
        done += n
    return {
        t: (np.concatenate(rows_by_tag[t]) if rows_by_tag[t] else np.empty((0, grid.n_voxels)))
        for t in tags
    }, done


def estimate_fisher(
    class_tag, lam, sens, det, params, kernels, n_mc_events, seed,
    window_fraction=0.1, toy=None, allow_large=False, max_decay_factor=20000,
):
    """Monte-Carlo Fisher estimate for one class: events are
    drawn by simulating decays from ``lam`` and keeping class-k detections
    until ``n_mc_events`` accumulate; the prefactor N^k is n_mc_events."""
    if n_mc_events < 1:
        raise ValueError("n_mc_events must be >= 1")
    if class_tag not in CLASS_TAGS:
        raise ValueError(f"unknown class tag {class_tag!r}")
    _fisher_guard(lam.grid, allow_large)
    rows_by_tag, _ = _collect_class_rows(
        [class_tag], lam, det, params, kernels, seed, window_fraction, toy,
        {class_tag: n_mc_events}, max_decays=n_mc_events * max_decay_factor,
    )
    rows = rows_by_tag[class_tag]
    if rows.shape[0] < n_mc_events:
        raise ValueError(
            f"only {rows.shape[0]} class-{class_tag} events in the decay budget; "
            "the class rate is too low for the requested n_mc_events"
        )
    sens_k = _sens_vector(sens, class_tag)
    return fisher_from_rows(class_tag, rows, lam, sens_k, n_events=n_mc_events)


def estimate_fisher_multi(
    class_tags, lam, sens, det, params, kernels, n_decays, seed,
    window_fraction=0.1, toy=None, allow_large=False,
):
    """Per-class Fisher estimates from one shared set of simulated decays;
    each class uses all of its detections (N^k = accepted count), so the
    summary total over classes is exactly the sum of the parts."""
    _fisher_guard(lam.grid, allow_large)
    grid = lam.grid
    res = run_simulation(
        grid, lam.values, n_decays, det, params, seed,
        window_fraction=window_fraction, toy=toy, collect=True, keep_truth=False,
        stream_domain=rng.DOMAIN_FISHER,
    )
    by_class = group_events(res.events)
    out = {}
    for tag in class_tags:
        if tag not in CLASS_TAGS:
            raise ValueError(f"unknown class tag {tag!r}")
        ev = by_class.get(tag, [])
        if not ev:
            raise ValueError(f"no class-{tag} events among {n_decays} decays")
        chunks = [rows.copy() for _, rows, _eps in _iter_rows(ev, grid, kernels)]
        rows = np.concatenate(chunks)
        out[tag] = fisher_from_rows(tag, rows, lam, _sens_vector(sens, tag))
    return out


def _power_iteration_lambda_max(matrix, tol=1e-8, max_iter=10000):
    nj = matrix.shape[0]
    v = np.full(nj, 1.0 / math.sqrt(nj))
    lam_prev = 0.0
    for _ in range(max_iter):
        w = matrix @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = float(v @ (matrix @ v))
        if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            return lam
        lam_prev = lam
    return lam_prev


@dataclass
class FisherReport:
    """Per-class information summary ranked by trace, plus the additive
    total I = sum_k I^k."""

    rows: list
    total_matrix: np.ndarray
    total_trace: float
    total_lambda_max: float


def fisher_summary(matrices, tol=1e-8):
    if not matrices:
        raise ValueError("at least one Fisher matrix is required")
    nj = matrices[0].matrix.shape[0]
    for fm in matrices:
        if fm.matrix.shape != (nj, nj):
            raise ValueError("Fisher matrices have mismatched dimensions")
    rows = []
    total = np.zeros((nj, nj))
    for fm in matrices:
        total = total + fm.matrix
        rows.append(
            {
                "class": fm.class_tag,
                "trace": float(np.trace(fm.matrix)),
                "lambda_max": _power_iteration_lambda_max(fm.matrix, tol),
                "n_events": fm.n_events,
            }
        )
    rows.sort(key=lambda r: r["trace"], reverse=True)
    return FisherReport(
        rows=rows,
        total_matrix=total,
        total_trace=float(np.trace(total)),
        total_lambda_max=_power_iteration_lambda_max(total, tol),
    )


# ---------------------------------------------------------------------------
# model-consistency diagnostic


def model_consistency_report(events_by_class, lam, sens, kernels):
    """Measure the gap E[a] - s~ between the kernel backprojection mean and
    the MC sensitivity (zero for a perfectly matched model; nonzero here
    because sensitivities come from transport while A is analytic)."""
    report = {}
    lam_v = _lam_values(lam)
    grid = _grid_of(lam, sens)
    for tag, events in events_by_class.items():
        n = _n_events(events)
        if n == 0:
            continue
        sens_k = _sens_vector(sens, tag)
        mu = float(np.sum(lam_v * sens_k))
        s_tilde = np.where(lam_v > 0.0, (lam_v * sens_k / mu) / np.where(lam_v > 0, lam_v, 1.0), sens_k / mu)
        bp = np.zeros_like(lam_v)
        used = 0
        for _, rows, _eps in _iter_rows(events, grid, kernels):
            a = np.empty_like(rows)
            _normalized_backprojections(rows, lam_v, a)
            keep = ~np.isnan(a[:, 0])
            bp += a[keep].sum(axis=0)
            used += int(np.count_nonzero(keep))
        if used == 0:
            continue
        mean_a = bp / used
        gap = float(np.linalg.norm(mean_a - s_tilde) / max(np.linalg.norm(s_tilde), 1e-300))
        report[tag] = {"relative_gap": gap, "n_events": used}
    return report


# ---------------------------------------------------------------------------
# file formats


def save_image(stem, image, config_echo=None):
    """JSON header at <stem>.json plus raw little-endian float32 values at
    <stem>.raw, x-fastest voxel order."""
    header = {
        "format": "gamma3-image-v1",
        "dims": list(image.grid.dims),
        "voxel_size_mm": list(image.grid.voxel_size),
        "origin_mm": list(image.grid.origin.as_tuple()),
    }
    if config_echo is not None:
        header["config"] = config_echo
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
        fh.write("\n")
    image.values.astype("<f4").tofile(f"{stem}.raw")


def load_image(stem):
    from .geometry import Point3, VoxelGrid

    with open(f"{stem}.json") as fh:
        header = json.load(fh)
    grid = VoxelGrid(
        tuple(header["dims"]),
        tuple(header["voxel_size_mm"]),
        Point3(*header.get("origin_mm", (0.0, 0.0, 0.0))),
    )
    values = np.fromfile(f"{stem}.raw", dtype="<f4").astype(np.float64)
    return ActivityImage(grid, values)


def write_loglik_csv(path, logliks, meta=None):
    """CSV iteration,loglik,delta; row 0 is the initial image."""
    lines = []
    if meta:
        lines.append("# " + json.dumps(meta, sort_keys=True))
    lines.append("iteration,loglik,delta")
    for i, ll in enumerate(logliks):
        delta = 0.0 if i == 0 else ll - logliks[i - 1]
        lines.append(f"{i},{ll!r},{delta!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_fisher_csv(path, report, meta=None):
    """CSV class,trace,lambda_max,n_events ranked by trace, then a total row."""
    lines = []
    if meta:
        lines.append("# " + json.dumps(meta, sort_keys=True))
    lines.append("class,trace,lambda_max,n_events")
    for r in report.rows:
        lines.append(f"{r['class']},{r['trace']!r},{r['lambda_max']!r},{r['n_events']}")
    n_total = sum(r["n_events"] for r in report.rows)
    lines.append(f"total,{report.total_trace!r},{report.total_lambda_max!r},{n_total}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_fisher_matrix(stem, fisher):
    """Raw little-endian float64 dump of the full J x J matrix."""
    fisher.matrix.astype("<f8").tofile(f"{stem}.{fisher.class_tag}.fim.raw")
