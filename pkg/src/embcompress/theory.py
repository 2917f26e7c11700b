"""Fixed-design regression theory and the synthetic experiments validating it.

Covers the closed-form risk of the optimal linear regressor, the exact
expected risk gap between a compressed and an uncompressed design matrix, the
Lipschitz-loss upper bound on that gap, the quantization overlap bound with
its per-sample perturbation form, plus the matrix generators and Monte-Carlo
harnesses used to check all of the above.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.special
import scipy.stats

from .compress import QuantizationGrid, _det_codes, _stoch_codes
from .linalg import (
    LinalgError,
    as_matrix,
    as_vector,
    det_sum,
    least_squares_solve,
    sq_fro_norm,
    thin_svd,
)
from .measures import eigenspace_overlap, pip_loss, quality_report
from .rng import CounterRng


@dataclass(frozen=True)
class LabelModel:
    """Distribution of the true-label coefficient vector and the noise level.

    ``covariance`` is None for the identity case or an explicit symmetric PSD
    matrix.  The noise variance is derived, never stored:
    sigma^2 = noise_ratio^2 * trace(covariance) / n.
    """

    covariance: np.ndarray | None = None
    noise_ratio: float = 0.0

    def __post_init__(self):
        if self.noise_ratio < 0:
            raise ValueError(f"noise_ratio must be >= 0, got {self.noise_ratio}")
        if self.covariance is not None:
            cov = as_matrix(self.covariance, "covariance")
            if cov.shape[0] != cov.shape[1]:
                raise ValueError(f"covariance must be square, got {cov.shape}")
            scale = max(1.0, float(np.max(np.abs(cov))))
            if float(np.max(np.abs(cov - cov.T))) > 1e-10 * scale:
                raise ValueError("covariance is not symmetric within 1e-10")
            if float(np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T)))) < -1e-10 * scale:
                raise ValueError("covariance is not positive semidefinite")
            object.__setattr__(self, "covariance", cov)

    def check_dim(self, d: int) -> None:
        if self.covariance is not None and self.covariance.shape[0] != d:
            raise ValueError(
                f"covariance is {self.covariance.shape[0]}x{self.covariance.shape[0]}, "
                f"but the design has {d} retained directions"
            )

    def trace(self, d: int) -> float:
        if self.covariance is None:
            return float(d)
        return float(np.trace(self.covariance))

    def lambda_min(self, d: int) -> float:
        if self.covariance is None:
            return 1.0
        return float(np.min(np.linalg.eigvalsh(self.covariance)))

    def sqrt_factor(self, d: int) -> np.ndarray | None:
        """Symmetric PSD square root for sampling z = S g, or None for
        identity covariance."""
        if self.covariance is None:
            return None
        vals, vecs = np.linalg.eigh(self.covariance)
        vals = np.clip(vals, 0.0, None)
        return (vecs * np.sqrt(vals)) @ vecs.T

    def sigma2(self, n: int, d: int) -> float:
        return self.noise_ratio**2 * self.trace(d) / n


@dataclass(frozen=True)
class ExperimentResult:
    """A Monte-Carlo estimate next to its theoretical counterpart."""

    estimate: float
    std_error: float
    theory_value: float
    theory_kind: str  # "exact_identity" or "upper_bound"
    trials: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def _require_full_rank(X: np.ndarray, name: str):
    f = thin_svd(X)
    rank = f.rank()
    if rank < X.shape[1]:
        raise LinalgError(
            f"{name} is rank-deficient (numerical rank {rank} < {X.shape[1]} columns)"
        )
    return f


def closed_form_risk(X, ybar, sigma2: float) -> float:
    """Expected loss of the optimal linear regressor on a full-rank design:
    (1/n)(||ybar||^2 - ||U^T ybar||^2 + d sigma^2), d the number of retained
    singular vectors."""
    X = as_matrix(X, "X")
    ybar = as_vector(ybar, "ybar")
    if ybar.size != X.shape[0]:
        raise ValueError(f"ybar has length {ybar.size}, expected {X.shape[0]}")
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    f = _require_full_rank(X, "X")
    d = f.r
    proj = f.U.T @ ybar
    return (det_sum(ybar * ybar) - det_sum(proj * proj) + d * sigma2) / X.shape[0]


def exact_expected_gap(X, Xt, model: LabelModel) -> float:
    """Exact expectation of risk(Xt) - risk(X) over random true labels drawn
    in the column span of X.

    Identity covariance gives (1/n)(d - ||Ut^T U||_F^2) - (d-k) sigma^2 / n;
    a general covariance replaces the cross term with ||Ut^T U S||_F^2 for
    S the PSD square root.
    """
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    if X.shape[0] != Xt.shape[0]:
        raise ValueError(f"row count mismatch: {X.shape[0]} vs {Xt.shape[0]}")
    fx = _require_full_rank(X, "X")
    ft = _require_full_rank(Xt, "Xt")
    n, d = X.shape
    k = Xt.shape[1]
    model.check_dim(d)
    sigma2 = model.sigma2(n, d)
    M = ft.U.T @ fx.U
    S = model.sqrt_factor(d)
    if S is not None:
        M = M @ S
    return (model.trace(d) - sq_fro_norm(M)) / n - (d - k) * sigma2 / n


def expected_gap_upper_bound(X, Xt, model: LabelModel) -> float:
    """Upper bound on the exact gap in terms of the overlap score:
    (trace(Sigma) - d lambda_min(Sigma) overlap)/n - c^2 trace(Sigma)(d-k)/n^2."""
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    n, d = X.shape
    k = Xt.shape[1]
    model.check_dim(d)
    score = eigenspace_overlap(X, Xt)
    tr = model.trace(d)
    return (tr - d * model.lambda_min(d) * score) / n - (
        model.noise_ratio**2 * tr * (d - k) / n**2
    )


def lipschitz_gap_bound(X, Xt, L: float, model: LabelModel) -> float:
    """Upper bound on the expected risk gap for an L-Lipschitz convex loss:
    (L/sqrt(n)) (sqrt(trace(Sigma) - d lambda_min(Sigma) overlap)
    + 2 c sqrt(trace(Sigma)))."""
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    n, d = X.shape
    model.check_dim(d)
    score = eigenspace_overlap(X, Xt)
    tr = model.trace(d)
    inner = max(tr - d * model.lambda_min(d) * score, 0.0)
    return (L / math.sqrt(n)) * (math.sqrt(inner) + 2.0 * model.noise_ratio * math.sqrt(tr))


def uniform_overlap_bound(bits: int, a: float) -> float:
    """Bound on the expected overlap shortfall of a stochastic b-bit
    quantization of a matrix with entries in [-1/sqrt(d), 1/sqrt(d)] and
    smallest singular value a*sqrt(n/d): 20 / ((2^b - 1)^2 a^4).

    Values above 1 are vacuous; the raw value is returned so callers can see
    by how much.
    """
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    if not 0 < a <= 1:
        raise ValueError(f"a must be in (0, 1], got {a}")
    return 20.0 / (((1 << bits) - 1) ** 2 * a**4)


def conditioning_scalar(X) -> float:
    """The scalar a with s_min(X) = a * sqrt(n/d)."""
    X = as_matrix(X, "X")
    f = thin_svd(X)
    n, d = X.shape
    return float(f.s[-1] / math.sqrt(n / d))


def davis_kahan_sample_bound(X, Xt) -> float:
    """Per-sample perturbation bound on the overlap shortfall:
    ||Xt Xt^T - X X^T||_F^2 / (d * s_min(X)^4), valid under the eigenvalue
    separation conditions of the sin-theta inequality."""
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    if X.shape != Xt.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {Xt.shape}")
    fx = _require_full_rank(X, "X")
    d = X.shape[1]
    smin = float(fx.s[-1])
    gram_gap = pip_loss(X, Xt)
    return gram_gap**2 / (d * smin**4)


# ---------------------------------------------------------------------------
# matrix generators


def gen_uniform_matrix(n: int, d: int, seed: int) -> np.ndarray:
    """n x d matrix with i.i.d. entries uniform on [-1/sqrt(d), 1/sqrt(d)],
    reproducible from the seed alone."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    u = CounterRng(seed).uniform_block(n, d)
    return (2.0 * u - 1.0) / math.sqrt(d)


def gen_scaled_matrix(n: int, d: int, decay_min: float, seed: int) -> np.ndarray:
    """Uniform matrix with columns rescaled by log-spaced factors from 1 down
    to ``decay_min``, producing progressively worse-conditioned designs."""
    if not 0 < decay_min <= 1:
        raise ValueError(f"decay_min must be in (0, 1], got {decay_min}")
    g = np.logspace(0.0, math.log10(decay_min), d)
    return gen_uniform_matrix(n, d, seed) * g


def gen_student_t_matrix(n: int, d: int, df: float, scale: float, seed: int) -> np.ndarray:
    """Heavy-tailed n x d matrix with i.i.d. scaled Student-t entries,
    generated by inverse-CDF transform of counter-based uniforms."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if df <= 0 or scale <= 0:
        raise ValueError("df and scale must be positive")
    u = CounterRng(seed).uniform_block(n, d)
    return scale * scipy.stats.t.ppf(u, df)


def stochastic_quantize_full_range(X, bits: int, seed: int) -> np.ndarray:
    """Stochastic b-bit quantization over the fixed interval
    [-1/sqrt(d), 1/sqrt(d)], with no clipping or threshold search.

    This is the exact setting of the overlap bound: entries already live in
    the interval, and the rounding variance obeys the (spacing/2)^2 cap.
    """
    X = as_matrix(X, "X")
    r = 1.0 / math.sqrt(X.shape[1])
    if float(np.max(np.abs(X))) > r:
        raise ValueError("entries exceed 1/sqrt(d); this quantizer is for bounded matrices")
    grid = QuantizationGrid(bits, r)
    codes = _stoch_codes(X, grid, CounterRng(seed), row0=0)
    return grid.values_for(codes)


# ---------------------------------------------------------------------------
# Monte-Carlo harnesses


def simulate_regression_gap(
    X, Xt, model: LabelModel, trials: int, seed: int
) -> ExperimentResult:
    """Monte-Carlo check of the exact squared-loss gap identity.

    Each trial draws a coefficient vector z, forms the true labels in the
    span of X, and evaluates the closed-form risks of both designs; the noise
    average is already integrated into the closed form, so no noise draws are
    needed.  Trials are keyed by (seed, trial) counters, so the estimate does
    not depend on scheduling.
    """
    if trials < 2:
        raise ValueError(f"trials must be >= 2, got {trials}")
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    fx = _require_full_rank(X, "X")
    ft = _require_full_rank(Xt, "Xt")
    n, d = X.shape
    k = Xt.shape[1]
    model.check_dim(d)
    sigma2 = model.sigma2(n, d)

    Z = CounterRng(seed).substream(0).normal_block(trials, d)
    S = model.sqrt_factor(d)
    if S is not None:
        Z = Z @ S  # S symmetric, so rows become S g
    Ybar = fx.U @ Z.T  # (n, trials)
    proj_x = fx.U.T @ Ybar
    proj_t = ft.U.T @ Ybar
    gaps = (
        np.sum(proj_x * proj_x, axis=0)
        - np.sum(proj_t * proj_t, axis=0)
        + (k - d) * sigma2
    ) / n
    estimate = float(np.mean(gaps))
    std_error = float(np.std(gaps, ddof=1) / math.sqrt(trials))
    return ExperimentResult(
        estimate=estimate,
        std_error=std_error,
        theory_value=exact_expected_gap(X, Xt, model),
        theory_kind="exact_identity",
        trials=trials,
        config={
            "n": n,
            "d": d,
            "k": k,
            "noise_ratio": model.noise_ratio,
            "covariance": "identity" if model.covariance is None else "explicit",
            "seed": seed,
        },
    )


@dataclass(frozen=True)
class GdConfig:
    """Full-batch gradient descent settings for the logistic fit.

    ``step`` defaults to 0.5 / lambda_max(X^T X / n), halved whenever a step
    would increase the loss.  ``tol`` is the gradient-norm stopping threshold
    and defaults to 1e-6 * n.
    """

    step: float | None = None
    tol: float | None = None
    max_steps: int = 100_000


def _sigmoid(z):
    return scipy.special.expit(z)


def _softplus(z):
    return np.logaddexp(0.0, z)


def logistic_loss(pred_logits, target_logits):
    """Cross-entropy between Bernoulli parameters given as logits,
    elementwise: sig(z) softplus(-z') + (1 - sig(z)) softplus(z')."""
    p = _sigmoid(target_logits)
    return p * _softplus(-np.asarray(pred_logits)) + (1.0 - p) * _softplus(pred_logits)


def mean_logistic_loss(pred_logits, target_logits, axis=None):
    return np.mean(logistic_loss(pred_logits, target_logits), axis=axis)


def _fit_logistic_gd(X: np.ndarray, Y: np.ndarray, gd: GdConfig) -> np.ndarray:
    """Minimize the summed logistic loss for each column of Y; returns the
    (d, T) weight block.  Shared adaptive step, per-column convergence."""
    n, d = X.shape
    Y2 = Y if Y.ndim == 2 else Y[:, None]
    tol = gd.tol if gd.tol is not None else 1e-6 * n
    smax = float(np.linalg.svd(X, compute_uv=False)[0])
    step = gd.step if gd.step is not None else 0.5 / (smax**2 / n)

    S_target = _sigmoid(Y2)
    W = np.zeros((d, Y2.shape[1]))
    total = det_sum(logistic_loss(X @ W, Y2))
    increases = 0
    for _ in range(gd.max_steps):
        G = X.T @ (_sigmoid(X @ W) - S_target)
        if float(np.max(np.sqrt(np.sum(G * G, axis=0)))) <= tol:
            break
        new_total = math.inf
        while True:
            W_new = W - step * G
            new_total = det_sum(logistic_loss(X @ W_new, Y2))
            if new_total <= total or step < 1e-20:
                break
            step *= 0.5
        if new_total > total:
            increases += 1
            if increases >= 20:
                raise LinalgError(
                    "gradient descent diverged: loss increased on 20 consecutive steps"
                )
        else:
            increases = 0
        W, total = W_new, new_total
    else:
        warnings.warn(
            f"gradient descent stopped at max_steps={gd.max_steps} before "
            f"reaching the gradient tolerance {tol:g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return W


def fit_linear_model(X, y, loss: str = "squared", gd: GdConfig | None = None) -> np.ndarray:
    """Minimize the empirical loss of a linear model.

    Squared loss reduces to the least-squares solve; logistic loss (labels
    are logits) runs full-batch gradient descent per :class:`GdConfig`.
    """
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    if loss == "squared":
        return least_squares_solve(X, y)
    if loss != "logistic":
        raise ValueError(f"unknown loss {loss!r}")
    _require_full_rank(X, "X")
    return _fit_logistic_gd(X, y, gd or GdConfig())[:, 0]


def simulate_lipschitz_gap(
    X,
    Xt,
    model: LabelModel,
    trials: int,
    seed: int,
    gd: GdConfig | None = None,
    L: float = 1.0,
) -> ExperimentResult:
    """Monte-Carlo estimate of the logistic-loss risk gap against its upper
    bound.

    Each trial draws (z, noise), fits logistic models on both designs against
    the noisy logits, and scores the mean test loss against the true logits.
    """
    if trials < 2:
        raise ValueError(f"trials must be >= 2, got {trials}")
    X = as_matrix(X, "X")
    Xt = as_matrix(Xt, "Xt")
    fx = _require_full_rank(X, "X")
    _require_full_rank(Xt, "Xt")
    n, d = X.shape
    k = Xt.shape[1]
    model.check_dim(d)
    gd = gd or GdConfig()
    sigma = math.sqrt(model.sigma2(n, d))

    rng = CounterRng(seed)
    Z = rng.substream(0).normal_block(trials, d)
    S = model.sqrt_factor(d)
    if S is not None:
        Z = Z @ S
    Ybar = fx.U @ Z.T  # (n, trials)
    Y = Ybar + sigma * rng.substream(1).normal_block(trials, n).T

    W = _fit_logistic_gd(X, Y, gd)
    Wt = _fit_logistic_gd(Xt, Y, gd)
    test_x = mean_logistic_loss(X @ W, Ybar, axis=0)
    test_t = mean_logistic_loss(Xt @ Wt, Ybar, axis=0)
    gaps = test_t - test_x
    estimate = float(np.mean(gaps))
    std_error = float(np.std(gaps, ddof=1) / math.sqrt(trials))
    return ExperimentResult(
        estimate=estimate,
        std_error=std_error,
        theory_value=lipschitz_gap_bound(X, Xt, L, model),
        theory_kind="upper_bound",
        trials=trials,
        config={
            "n": n,
            "d": d,
            "k": k,
            "noise_ratio": model.noise_ratio,
            "L": L,
            "covariance": "identity" if model.covariance is None else "explicit",
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# sweep experiments


SCALING_AXES = ("bits", "scalar", "vocab", "dim")


def scaling_experiment(axis: str, levels, base_config: dict, seeds) -> list[dict]:
    """Overlap-shortfall sweep along one axis (bits, column-decay scalar,
    vocabulary size, or dimension).

    For each (level, seed): generate the matrix, stochastically quantize over
    the fixed full interval [-1/sqrt(d), 1/sqrt(d)] (the bound's setting, no
    clip search), and record 1 - overlap next to the bound evaluated at the
    measured conditioning scalar.
    """
    if axis not in SCALING_AXES:
        raise ValueError(f"axis must be one of {SCALING_AXES}, got {axis!r}")
    levels = list(levels)
    if not levels:
        raise ValueError("levels must be non-empty")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds must be non-empty")
    base = {"n": 10_000, "d": 10, "bits": 2, "decay_min": 1.0}
    base.update(base_config or {})

    rows = []
    for level in levels:
        for seed in seeds:
            cfg = dict(base)
            if axis == "bits":
                cfg["bits"] = int(level)
            elif axis == "scalar":
                cfg["decay_min"] = float(level)
            elif axis == "vocab":
                cfg["n"] = int(level)
            else:
                cfg["d"] = int(level)
            n, d, bits = cfg["n"], cfg["d"], cfg["bits"]
            if cfg["decay_min"] < 1.0:
                X = gen_scaled_matrix(n, d, cfg["decay_min"], seed)
            else:
                X = gen_uniform_matrix(n, d, seed)
            Xt = stochastic_quantize_full_range(X, bits, CounterRng(seed).substream(1).seed)
            a = min(conditioning_scalar(X), 1.0)
            bound = uniform_overlap_bound(bits, a) if a > 0 else math.inf
            rows.append(
                {
                    "axis": axis,
                    "level": level,
                    "seed": seed,
                    "one_minus_overlap": 1.0 - eigenspace_overlap(X, Xt),
                    "bound": bound,
                }
            )
    return rows


def clipping_curve(X, bits: int, rounding: str, r_grid, seed: int = 0) -> list[dict]:
    """Overlap and reconstruction error as functions of the clip threshold.

    Each grid point clips, quantizes at that threshold with the requested
    rounding, and records the overlap with the original plus ||Xt - X||_F.
    """
    X = as_matrix(X, "X")
    r_grid = np.asarray(r_grid, dtype=np.float64).ravel()
    xmax = float(np.max(np.abs(X)))
    if r_grid.size == 0 or np.any(r_grid <= 0) or np.any(r_grid > xmax):
        raise ValueError("r_grid must lie in (0, max|X|]")
    if rounding not in ("deterministic", "stochastic"):
        raise ValueError(f"unknown rounding {rounding!r}")
    rng = CounterRng(seed)
    rows = []
    for i, r in enumerate(r_grid):
        grid = QuantizationGrid(bits, float(r))
        clipped = np.clip(X, -r, r)
        if rounding == "deterministic":
            codes = _det_codes(clipped, grid)
        else:
            codes = _stoch_codes(clipped, grid, rng.substream(i), row0=0)
        Xt = grid.values_for(codes)
        rows.append(
            {
                "r": float(r),
                "overlap": eigenspace_overlap(X, Xt),
                "recon_error": math.sqrt(sq_fro_norm(Xt - X)),
            }
        )
    return rows


def _random_orthonormal(n: int, d: int, rng: CounterRng) -> np.ndarray:
    G = rng.normal_block(n, d)
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def table4_perturbation(spectrum, n: int, seed: int) -> dict:
    """Zero out the top singular value of a synthetic matrix and compare the
    measured quality report against the closed forms that perturbation
    implies.

    Returns {"report", "measured", "predicted"}; the measured dict carries
    the same keys as the predicted one (relative errors, deltas, overlap
    shortfall) so they can be compared directly.
    """
    s = np.asarray(spectrum, dtype=np.float64).ravel()
    d = s.size
    if d < 2:
        raise ValueError("spectrum must have at least 2 entries")
    if np.any(s <= 0) or np.any(np.diff(s) > 0):
        raise ValueError("spectrum must be positive and non-increasing")
    if n < d:
        raise ValueError(f"need n >= d, got n={n}, d={d}")
    rng = CounterRng(seed)
    U = _random_orthonormal(n, d, rng.substream(0))
    V = _random_orthonormal(d, d, rng.substream(1))
    X = (U * s) @ V.T
    s_dropped = s.copy()
    s_dropped[0] = 0.0
    Xt = (U * s_dropped) @ V.T

    lam = float(s[-1] ** 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # Xt is rank d-1 by construction
        report = quality_report(X, Xt, lam)
    fro_x = math.sqrt(float(np.sum(s**2)))
    fro_gram_x = math.sqrt(float(np.sum(s**4)))
    measured = {
        "rel_reconstruction": report.reconstruction_error / fro_x,
        "rel_pip": report.pip_loss / fro_gram_x,
        "delta1": report.delta1,
        "delta2": report.delta2,
        "delta_max": report.delta_max,
        "one_minus_overlap": 1.0 - report.eigenspace_overlap,
    }
    s1 = float(s[0])
    predicted = {
        "rel_reconstruction": s1 / fro_x,
        "rel_pip": s1**2 / fro_gram_x,
        "delta1": s1**2 / (s1**2 + lam),
        "delta2": 0.0,
        "delta_max": (s1**2 + lam) / lam,
        "one_minus_overlap": 1.0 / d,
    }
    return {"report": report, "measured": measured, "predicted": predicted}
