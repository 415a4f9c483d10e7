"""
Linear Gaussian state space model used to turn verse-level scores into
song-level emotion dynamics.

    z_t = A z_{t-1} + e_t,   e_t ~ N(0, Q)
    y_t = C z_t + v_t,       v_t ~ N(0, R)

Every sequence carries its own frozen initial belief on z_0; the first
measurement at t=1 is preceded by one prediction from that belief.

- kalman_filter / kalman_smooth implement the forward and RTS recursions.
- em_fit estimates any subset of {A, C, Q, R} from many sequences at once.
- simulate draws latent and observed sequences for benchmarks and tests.
"""

from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import solve_discrete_lyapunov

from utils.errors import InputError, NumericError
from utils.logger import logger

# --- Constants ---
SYMMETRY_TOL = 1e-9
DIAGONAL_TOL = 1e-12
CONDITION_LIMIT = 1e12
COVARIANCE_FLOOR = 1e-9
DEFAULT_INITIAL_COV = 2.0
EM_PARAMETERS: FrozenSet[str] = frozenset({"A", "C", "Q", "R"})


# --- Matrix helpers ---
def _as_matrix(value, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if matrix.ndim != 2:
        raise InputError(f"{name} must be a matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InputError(f"{name} contains non-finite entries")
    return matrix


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _tidy_covariance(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp tiny negative diagonal drift to zero."""
    tidy = (matrix + matrix.T) / 2.0
    diagonal = np.diag_indices_from(tidy)
    tidy[diagonal] = np.maximum(tidy[diagonal], 0.0)
    return tidy


def _check_covariance(matrix: np.ndarray, name: str, tol: float = 0.0) -> None:
    if matrix.shape[0] != matrix.shape[1]:
        raise InputError(f"{name} must be square, got shape {matrix.shape}")
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYMMETRY_TOL:
        raise InputError(f"{name} is not symmetric")
    if np.any(np.diag(matrix) < -tol):
        raise InputError(f"{name} has negative diagonal entries")


def _checked_inverse(matrix: np.ndarray, what: str, step: Optional[int] = None) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = np.linalg.cond(matrix)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise NumericError(f"singular {what} (condition estimate {condition:.3e})", step=step)
    return np.linalg.inv(matrix)


def _floor_covariance(matrix: np.ndarray, name: str) -> np.ndarray:
    eigenvalues, eigenvectors = np.linalg.eigh(_tidy_covariance(matrix))
    if np.min(eigenvalues) >= COVARIANCE_FLOOR:
        return _tidy_covariance(matrix)
    logger.warning(
        f"EM produced a degenerate {name} (min eigenvalue {np.min(eigenvalues):.3e}); "
        f"flooring at {COVARIANCE_FLOOR:g}"
    )
    eigenvalues = np.maximum(eigenvalues, COVARIANCE_FLOOR)
    return _tidy_covariance((eigenvectors * eigenvalues) @ eigenvectors.T)


# --- Domain types ---
@dataclass(frozen=True)
class SsmParams:
    """Model parameters (A, C, Q, R); n is the state and m the observation dimension."""

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        C = _as_matrix(self.C, "C")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        n, m = A.shape[0], C.shape[0]
        if A.shape != (n, n):
            raise InputError(f"A must be square, got shape {A.shape}")
        if C.shape != (m, n):
            raise InputError(f"C must be {m}x{n}, got shape {C.shape}")
        if Q.shape != (n, n):
            raise InputError(f"Q must be {n}x{n}, got shape {Q.shape}")
        if R.shape != (m, m):
            raise InputError(f"R must be {m}x{m}, got shape {R.shape}")
        _check_covariance(Q, "Q")
        _check_covariance(R, "R")
        for name, value in (("A", A), ("C", C), ("Q", Q), ("R", R)):
            object.__setattr__(self, name, _frozen(value))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @classmethod
    def scalar(cls, A: float = 1.0, C: float = 1.0, Q: float = 1.0, R: float = 5.0) -> "SsmParams":
        """Univariate model; the defaults are the per-emotion defaults of the pipeline."""
        return cls(A=[[A]], C=[[C]], Q=[[Q]], R=[[R]])

    def replace(self, **changes) -> "SsmParams":
        values = {"A": self.A, "C": self.C, "Q": self.Q, "R": self.R}
        values.update(changes)
        return SsmParams(**values)

    def as_dict(self) -> dict:
        """Plain nested lists, suitable for yaml.safe_dump."""
        return {name: getattr(self, name).tolist() for name in ("A", "C", "Q", "R")}


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of the latent state at one step."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_matrix(self.cov, "cov")
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise InputError(f"belief mean {mean.shape} and cov {cov.shape} are inconsistent")
        _check_covariance(cov, "belief covariance", tol=DIAGONAL_TOL)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(_tidy_covariance(cov)))

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


class InitialBelief(GaussianBelief):
    """Belief on z_0 for one sequence; kept fixed during EM unless asked otherwise."""

    @classmethod
    def from_first_observation(cls, y1, cov: float = DEFAULT_INITIAL_COV) -> "InitialBelief":
        mean = np.atleast_1d(np.asarray(y1, dtype=float))
        return cls(mean=mean, cov=cov * np.eye(mean.shape[0]))


class FilterStepStats(NamedTuple):
    residual: np.ndarray
    innovation_cov: np.ndarray
    gain: np.ndarray


class SmoothStepStats(NamedTuple):
    gain: np.ndarray


class FilterResult(NamedTuple):
    beliefs: List[GaussianBelief]
    stats: List[FilterStepStats]
    loglik: float


class SmoothResult(NamedTuple):
    smoothed: List[GaussianBelief]
    gains: List[SmoothStepStats]


class EmFitResult(NamedTuple):
    params: SsmParams
    loglik_trace: List[float]
    initial_beliefs: List[InitialBelief]


def _as_observations(ys, m: int) -> np.ndarray:
    observations = np.asarray(ys, dtype=float)
    if observations.ndim == 1:
        observations = observations.reshape(-1, 1) if m == 1 else observations.reshape(1, -1)
    if observations.ndim != 2 or observations.shape[1] != m:
        raise InputError(f"observations must have shape (T, {m}), got {np.shape(ys)}")
    if observations.shape[0] == 0:
        raise InputError("observation sequence is empty")
    if not np.all(np.isfinite(observations)):
        raise InputError("observation sequence contains non-finite values")
    return observations


def _check_belief(belief: GaussianBelief, params: SsmParams) -> None:
    if belief.mean.shape[0] != params.n:
        raise InputError(f"belief has dimension {belief.mean.shape[0]}, model state has {params.n}")


# --- Kalman recursions ---
def predict_step(prior: GaussianBelief, params: SsmParams) -> GaussianBelief:
    """One-step-ahead predictive belief: (A z, A S A^T + Q)."""
    _check_belief(prior, params)
    A = params.A
    return GaussianBelief(mean=A @ prior.mean, cov=_tidy_covariance(A @ prior.cov @ A.T + params.Q))


def update_step(
    predicted: GaussianBelief, y, params: SsmParams, step: Optional[int] = None
) -> Tuple[GaussianBelief, FilterStepStats]:
    """
    Measurement update of a predicted belief with observation y.

    Args:
        predicted (GaussianBelief): Output of predict_step.
        y: Observation vector of length m (a scalar is accepted when m == 1).
        params (SsmParams): Model parameters.
        step (int, optional): Time index reported in numeric errors.

    Returns:
        tuple: (posterior belief, FilterStepStats with residual, S_t and K_t)
    """
    _check_belief(predicted, params)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (params.m,):
        raise InputError(f"observation has shape {y.shape}, expected ({params.m},)")
    C = params.C
    residual = y - C @ predicted.mean
    innovation_cov = _tidy_covariance(C @ predicted.cov @ C.T + params.R)
    gain = predicted.cov @ C.T @ _checked_inverse(innovation_cov, "innovation covariance", step)
    mean = predicted.mean + gain @ residual
    cov = _tidy_covariance((np.eye(params.n) - gain @ C) @ predicted.cov)
    return GaussianBelief(mean=mean, cov=cov), FilterStepStats(residual, innovation_cov, gain)


def _gaussian_logpdf(residual: np.ndarray, cov: np.ndarray) -> float:
    _, logdet = np.linalg.slogdet(cov)
    mahalanobis = float(residual @ np.linalg.solve(cov, residual))
    return -0.5 * (residual.shape[0] * np.log(2.0 * np.pi) + logdet + mahalanobis)


def _forward(ys, params: SsmParams, init: GaussianBelief):
    observations = _as_observations(ys, params.m)
    _check_belief(init, params)
    predicted, beliefs, stats = [], [], []
    loglik = 0.0
    belief = init
    for t, y in enumerate(observations, start=1):
        prior = predict_step(belief, params)
        belief, step_stats = update_step(prior, y, params, step=t)
        loglik += _gaussian_logpdf(step_stats.residual, step_stats.innovation_cov)
        predicted.append(prior)
        beliefs.append(belief)
        stats.append(step_stats)
    return observations, predicted, FilterResult(beliefs, stats, float(loglik))


def kalman_filter(ys, params: SsmParams, init: GaussianBelief) -> FilterResult:
    """
    Runs the Kalman filter over one observation sequence.

    beliefs[t] conditions on y_1..y_t only; loglik is the innovation-form
    log-likelihood of the whole sequence.
    """
    _, _, result = _forward(ys, params, init)
    return result


def log_likelihood(ys, params: SsmParams, init: GaussianBelief) -> float:
    return kalman_filter(ys, params, init).loglik


def _backward_step(
    filtered: GaussianBelief,
    predicted_next: GaussianBelief,
    smoothed_next: GaussianBelief,
    params: SsmParams,
    step: int,
) -> Tuple[GaussianBelief, np.ndarray]:
    gain = filtered.cov @ params.A.T @ _checked_inverse(predicted_next.cov, "predicted covariance", step)
    mean = filtered.mean + gain @ (smoothed_next.mean - predicted_next.mean)
    cov = _tidy_covariance(filtered.cov + gain @ (smoothed_next.cov - predicted_next.cov) @ gain.T)
    return GaussianBelief(mean=mean, cov=cov), gain


def _smooth_pass(ys, params: SsmParams, init: GaussianBelief):
    observations, predicted, forward = _forward(ys, params, init)
    T = len(forward.beliefs)
    smoothed: List[GaussianBelief] = [None] * T
    gains: List[np.ndarray] = [None] * max(T - 1, 0)
    smoothed[-1] = forward.beliefs[-1]
    for t in range(T - 2, -1, -1):
        smoothed[t], gains[t] = _backward_step(
            forward.beliefs[t], predicted[t + 1], smoothed[t + 1], params, step=t + 1
        )
    return observations, predicted, forward, smoothed, gains


def kalman_smooth(ys, params: SsmParams, init: GaussianBelief) -> SmoothResult:
    """
    RTS smoother: the forward pass is exactly kalman_filter, the backward
    pass returns smoothed beliefs for t=1..T and the T-1 gains J_t.
    """
    _, _, _, smoothed, gains = _smooth_pass(ys, params, init)
    return SmoothResult(smoothed, [SmoothStepStats(gain) for gain in gains])


def kalman_summary(ys, params: SsmParams, init: GaussianBelief, method: str = "smoother") -> Tuple[np.ndarray, np.ndarray]:
    """
    Means (T x n) and one-sigma bands (T x n) of the filtered or smoothed states.
    """
    if method == "filter":
        beliefs = kalman_filter(ys, params, init).beliefs
    elif method == "smoother":
        beliefs = kalman_smooth(ys, params, init).smoothed
    else:
        raise InputError(f"unknown method {method!r}; expected 'filter' or 'smoother'")
    means = np.array([belief.mean for belief in beliefs])
    stds = np.array([belief.std for belief in beliefs])
    return means, stds


# --- EM ---
class _SufficientStats(NamedTuple):
    S11: np.ndarray  # sum_t E[z_t z_t^T], t=1..T
    S00: np.ndarray  # sum_t E[z_{t-1} z_{t-1}^T], t=1..T
    S10: np.ndarray  # sum_t E[z_t z_{t-1}^T], t=1..T
    Syz: np.ndarray  # sum_t y_t E[z_t]^T
    Syy: np.ndarray  # sum_t y_t y_t^T
    count: int
    loglik: float
    initial: GaussianBelief


def _expected_statistics(ys, params: SsmParams, init: GaussianBelief) -> _SufficientStats:
    observations, predicted, forward, smoothed, gains = _smooth_pass(ys, params, init)
    # Extend the backward pass to z_0 so the first transition is accounted for.
    initial, initial_gain = _backward_step(init, predicted[0], smoothed[0], params, step=0)
    all_gains = [initial_gain] + gains

    means = np.array([belief.mean for belief in smoothed])
    second_moments = [belief.cov + np.outer(belief.mean, belief.mean) for belief in smoothed]
    S11 = np.sum(second_moments, axis=0)
    S00 = initial.cov + np.outer(initial.mean, initial.mean) + S11 - second_moments[-1]
    previous_means = np.vstack([initial.mean, means[:-1]])
    S10 = np.zeros((params.n, params.n))
    for t, belief in enumerate(smoothed):
        S10 += belief.cov @ all_gains[t].T + np.outer(belief.mean, previous_means[t])
    return _SufficientStats(
        S11=S11,
        S00=S00,
        S10=S10,
        Syz=observations.T @ means,
        Syy=observations.T @ observations,
        count=observations.shape[0],
        loglik=forward.loglik,
        initial=initial,
    )


def _maximize(params: SsmParams, totals: _SufficientStats, which: FrozenSet[str]) -> SsmParams:
    A, C, Q, R = params.A, params.C, params.Q, params.R
    S11, S00, S10, Syz, Syy, N = totals.S11, totals.S00, totals.S10, totals.Syz, totals.Syy, totals.count
    if "A" in which:
        A = S10 @ _checked_inverse(S00, "state second moment")
    if "Q" in which:
        Q = _floor_covariance((S11 - A @ S10.T - S10 @ A.T + A @ S00 @ A.T) / N, "Q")
    if "C" in which:
        C = Syz @ _checked_inverse(S11, "state second moment")
    if "R" in which:
        R = _floor_covariance((Syy - C @ Syz.T - Syz @ C.T + C @ S11 @ C.T) / N, "R")
    return SsmParams(A=A, C=C, Q=Q, R=R)


def _pool(per_sequence: Sequence[_SufficientStats]) -> _SufficientStats:
    # Fixed sequence order keeps the reduction deterministic.
    first = per_sequence[0]
    S11, S00, S10, Syz, Syy = (np.zeros_like(first.S11), np.zeros_like(first.S00),
                               np.zeros_like(first.S10), np.zeros_like(first.Syz), np.zeros_like(first.Syy))
    count, loglik = 0, 0.0
    for stats in per_sequence:
        S11 = S11 + stats.S11
        S00 = S00 + stats.S00
        S10 = S10 + stats.S10
        Syz = Syz + stats.Syz
        Syy = Syy + stats.Syy
        count += stats.count
        loglik += stats.loglik
    return _SufficientStats(S11, S00, S10, Syz, Syy, count, loglik, first.initial)


def _e_step(sequences, params: SsmParams, n_jobs: int) -> List[_SufficientStats]:
    if n_jobs == 1:
        return [_expected_statistics(ys, params, init) for ys, init in sequences]
    return Parallel(n_jobs=n_jobs)(delayed(_expected_statistics)(ys, params, init) for ys, init in sequences)


def em_fit_full(
    sequences: Sequence[Tuple[Iterable, InitialBelief]],
    init_params: SsmParams,
    n_iter: int = 10,
    which: Iterable[str] = EM_PARAMETERS,
    update_initial: bool = False,
    n_jobs: int = 1,
) -> EmFitResult:
    """
    Expectation-maximization over many sequences sharing one parameter set.

    Args:
        sequences: (observations, initial belief) pairs.
        init_params (SsmParams): Starting parameters.
        n_iter (int): Number of EM iterations (0 returns init_params).
        which: Subset of {"A", "C", "Q", "R"} re-estimated by the M-step.
        update_initial (bool): Also re-estimate each sequence's initial belief.
        n_jobs (int): joblib workers for the E-step.

    Returns:
        EmFitResult: fitted params, log-likelihood trace (n_iter + 1 entries),
        and the initial beliefs used by the final iteration.
    """
    which = frozenset(which)
    if not which <= EM_PARAMETERS:
        raise InputError(f"unknown EM parameters {sorted(which - EM_PARAMETERS)}")
    if n_iter < 0:
        raise InputError("n_iter must be non-negative")
    sequences = [(_as_observations(ys, init_params.m), init) for ys, init in sequences]
    if not sequences:
        raise InputError("EM needs at least one sequence")

    params = init_params
    trace: List[float] = []
    for iteration in range(n_iter):
        per_sequence = _e_step(sequences, params, n_jobs)
        totals = _pool(per_sequence)
        trace.append(totals.loglik)
        params = _maximize(params, totals, which)
        if update_initial:
            sequences = [
                (ys, InitialBelief(mean=stats.initial.mean, cov=stats.initial.cov))
                for (ys, _), stats in zip(sequences, per_sequence)
            ]
        logger.debug(f"EM iteration {iteration + 1}/{n_iter}: loglik={totals.loglik:.6f}")
    trace.append(float(sum(log_likelihood(ys, params, init) for ys, init in sequences)))
    return EmFitResult(params, trace, [init for _, init in sequences])


def em_fit(
    sequences: Sequence[Tuple[Iterable, InitialBelief]],
    init_params: SsmParams,
    n_iter: int = 10,
    which: Iterable[str] = EM_PARAMETERS,
    n_jobs: int = 1,
) -> Tuple[SsmParams, List[float]]:
    """EM with frozen initial beliefs; returns (fitted params, loglik trace)."""
    result = em_fit_full(sequences, init_params, n_iter=n_iter, which=which, n_jobs=n_jobs)
    return result.params, result.loglik_trace


# --- Simulation ---
def stationary_initial(params: SsmParams) -> InitialBelief:
    """Zero-mean stationary belief; requires a stable transition matrix."""
    if np.max(np.abs(np.linalg.eigvals(params.A))) >= 1.0:
        raise InputError("stationary belief needs spectral radius of A below 1")
    cov = solve_discrete_lyapunov(params.A, params.Q)
    return InitialBelief(mean=np.zeros(params.n), cov=_tidy_covariance(cov))


def simulate(params: SsmParams, init: GaussianBelief, T: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draws z_1 from init, then runs the transition and observation equations.

    Returns:
        tuple: (latent states T x n, observations T x m)
    """
    if T < 1:
        raise InputError("T must be at least 1")
    _check_belief(init, params)
    rng = np.random.default_rng(seed)
    z = np.empty((T, params.n))
    z[0] = rng.multivariate_normal(init.mean, init.cov)
    transition_noise = rng.multivariate_normal(np.zeros(params.n), params.Q, size=T)
    observation_noise = rng.multivariate_normal(np.zeros(params.m), params.R, size=T)
    for t in range(1, T):
        z[t] = params.A @ z[t - 1] + transition_noise[t]
    y = z @ params.C.T + observation_noise
    return z, y
