"""Complex-valued echo-state network.

Fixed matrices (``W``, ``W_back``, ``W_in``) are real; states, feedback and the
readout are complex.  State update::

    x(t) = (1 - a) x(t-1) + a f(W_in u(t) + W x(t-1) + W_back y(t-1))
    y(t) = W_out x(t)

Time convention used by every trainer: a teacher is the sequence of targets
``y(1) .. y(T)`` (array of shape ``(T, L)``) plus the initial feedback ``y(0)``,
which defaults to the first teacher frame.  State ``x(t)`` is regressed on
``y(t)``; the first ``t_min`` states are discarded.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.blas import zherk

from . import formats
from .errors import ConvergenceError, DivergenceError, TrainingError

ACTIVATIONS = ("tanh_complex", "tanh_split")

_CHUNK = 256


@dataclass(frozen=True)
class ReservoirConfig:
    n_internal: int
    output_dim: int
    w_density: float = 0.015
    spectral_radius: float = 1.0
    leak_rate: float = 1.0
    ridge: float = 1e-6
    t_min: int = 0
    activation: str = "tanh_split"
    seed: int = 0
    multistep_split: float = 0.85
    input_dim: int = 0

    def __post_init__(self):
        if self.n_internal < 1 or self.output_dim < 1:
            raise ValueError("n_internal and output_dim must be positive")
        if not 0.0 < self.w_density <= 1.0:
            raise ValueError(f"w_density must be in (0, 1], got {self.w_density}")
        if self.spectral_radius <= 0:
            raise ValueError("spectral_radius must be positive")
        if not 0.0 < self.leak_rate <= 1.0:
            raise ValueError(f"leak_rate must be in (0, 1], got {self.leak_rate}")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.t_min < 0 or self.input_dim < 0:
            raise ValueError("t_min and input_dim must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 < self.multistep_split < 1.0:
            raise ValueError("multistep_split must be in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReservoirConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown reservoir config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ReservoirMatrices:
    W: sp.csr_matrix
    W_back: np.ndarray
    W_in: Optional[np.ndarray] = None


@dataclass
class ReservoirState:
    x: np.ndarray
    t: int = 0


@dataclass
class Readout:
    W_out: np.ndarray

    def __post_init__(self):
        self.W_out = np.asarray(self.W_out, dtype=np.complex128)
        if self.W_out.ndim != 2:
            raise ValueError("W_out must be a 2D (L x N) matrix")
        if not np.all(np.isfinite(self.W_out)):
            raise ValueError("W_out has non-finite entries")


@dataclass
class TrainingRecord:
    """Bookkeeping for one training run.

    Ranges are 1-based and inclusive, matching the time index of the targets.
    The provisional readout and the phase-2 states of a multi-step run are kept
    in memory for auditing but never serialized.
    """

    mode: str
    n_targets: int
    t1: Optional[int]
    phase1_range: tuple[int, int]
    phase2_range: Optional[tuple[int, int]]
    train_mse_phase1: float
    train_mse_phase2: Optional[float]
    state_matrix_shape: tuple[int, int]
    final_state: ReservoirState = field(repr=False)
    provisional_readout: Optional[Readout] = field(default=None, repr=False)
    phase2_states: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_targets": self.n_targets,
            "t1": self.t1,
            "phase1_range": list(self.phase1_range),
            "phase2_range": list(self.phase2_range) if self.phase2_range else None,
            "train_mse_phase1": self.train_mse_phase1,
            "train_mse_phase2": self.train_mse_phase2,
            "state_matrix_shape": list(self.state_matrix_shape),
        }


# -- matrix generation -------------------------------------------------------

def spectral_radius(W, tol: float = 1e-6, *, block_size: int = 8, max_iter: int = 20000,
                    rng: np.random.Generator | None = None) -> float:
    """Largest |eigenvalue| of a square matrix by block power iteration.

    A block of ``block_size`` vectors is iterated and re-orthonormalized; the
    estimate is the largest Ritz value of the projected matrix.  The block
    tracks complex-conjugate pairs that defeat single-vector power iteration.
    Converged when the dominant Ritz pair has relative residual
    ``|W v - lam v| / |lam| <= tol``.  On stagnation the block is restarted
    from fresh random vectors at twice the size; a ``ConvergenceError``
    carries the best estimate.
    """
    n = W.shape[0]
    if W.shape != (n, n) or n < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {W.shape}")
    rng = np.random.default_rng(0) if rng is None else rng
    p = min(block_size, n)
    check_every = 5
    budget = max_iter
    best = 0.0
    while budget > 0:
        # small random start; scale is irrelevant after the first QR
        Q, _ = np.linalg.qr(1e-3 * rng.standard_normal((n, p)))
        stint = max(budget // 2, check_every) if p < n else budget
        for it in range(1, stint + 1):
            Z = W @ Q
            if not np.any(Z):
                return 0.0
            Q, _ = np.linalg.qr(Z)
            if it % check_every and p < n:
                continue
            WQ = W @ Q
            vals, vecs = np.linalg.eig(Q.T @ WQ)
            k = int(np.argmax(np.abs(vals)))
            lam = vals[k]
            best = float(abs(lam))
            if p == n or best == 0.0:
                return best
            resid = np.linalg.norm(WQ @ vecs[:, k] - lam * (Q @ vecs[:, k]))
            if resid <= tol * best:
                return best
        budget -= stint
        p = min(2 * p, n)
    raise ConvergenceError(f"spectral radius did not converge to rel. tol {tol:g}", best_estimate=best)


def init_matrices(cfg: ReservoirConfig) -> ReservoirMatrices:
    """Draw W (Bernoulli(density) mask, U[-0.5, 0.5] values), W_back and W_in.

    W is rescaled to the target spectral radius.  A draw whose radius is
    numerically zero is redrawn with the next sub-seed, up to 10 attempts.
    """
    N, L, K = cfg.n_internal, cfg.output_dim, cfg.input_dim
    for attempt in range(10):
        rng = np.random.default_rng([cfg.seed, attempt])
        rows, cols = np.nonzero(rng.random((N, N)) < cfg.w_density)
        vals = rng.uniform(-0.5, 0.5, rows.size)
        W = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
        rho = spectral_radius(W, tol=1e-6, rng=rng)
        if rho < 1e-12:
            continue
        W = (W * (cfg.spectral_radius / rho)).tocsr()
        W_back = rng.uniform(-0.5, 0.5, (N, L))
        W_in = rng.uniform(-0.5, 0.5, (N, K)) if K > 0 else None
        return ReservoirMatrices(W, W_back, W_in)
    raise TrainingError(f"reservoir draw has zero spectral radius after 10 attempts (seed {cfg.seed})")


# -- dynamics ----------------------------------------------------------------

def activation(kind: str, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    if kind == "tanh_complex":
        return np.tanh(z)
    if kind == "tanh_split":
        out = np.empty_like(z)
        out.real = np.tanh(z.real)
        out.imag = np.tanh(z.imag)
        return out
    raise ValueError(f"unknown activation {kind!r}")


def _rmul(A, z: np.ndarray) -> np.ndarray:
    """Real matrix times complex vector/matrix without upcasting A."""
    z = np.asarray(z, dtype=np.complex128)
    if z.ndim == 1:
        zr = np.ascontiguousarray(z).view(np.float64).reshape(-1, 2)
        out = np.ascontiguousarray(A @ zr)
        return out.view(np.complex128).reshape(-1)
    return (A @ z.real) + 1j * (A @ z.imag)


def _check_dims(m: ReservoirMatrices, cfg: ReservoirConfig) -> None:
    N, L = cfg.n_internal, cfg.output_dim
    if m.W.shape != (N, N) or m.W_back.shape != (N, L):
        raise ValueError(f"matrices {m.W.shape}/{m.W_back.shape} do not match config N={N}, L={L}")
    if cfg.input_dim > 0 and (m.W_in is None or m.W_in.shape != (N, cfg.input_dim)):
        raise ValueError("W_in missing or misshapen for input_dim > 0")


def step_state(m: ReservoirMatrices, cfg: ReservoirConfig, x_prev: ReservoirState,
               u: np.ndarray | None, y_prev: np.ndarray) -> ReservoirState:
    """One leaky-integrator update driven by the feedback ``y_prev``."""
    _check_dims(m, cfg)
    x = np.asarray(x_prev.x, dtype=np.complex128)
    y_prev = np.asarray(y_prev, dtype=np.complex128)
    if x.shape != (cfg.n_internal,) or y_prev.shape != (cfg.output_dim,):
        raise ValueError(f"state/feedback shapes {x.shape}/{y_prev.shape} do not match config")
    pre = _rmul(m.W, x) + _rmul(m.W_back, y_prev)
    if cfg.input_dim > 0:
        if u is None or np.shape(u) != (cfg.input_dim,):
            raise ValueError(f"input of length {cfg.input_dim} required")
        pre = pre + _rmul(m.W_in, u)
    a = cfg.leak_rate
    return ReservoirState((1.0 - a) * x + a * activation(cfg.activation, pre), x_prev.t + 1)


def _as_frames(seq, width: int, what: str) -> np.ndarray:
    arr = getattr(seq, "frames", seq)
    arr = np.asarray(arr, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"{what} must have shape (T, {width}), got {arr.shape}")
    return arr


def _inputs(cfg: ReservoirConfig, u_seq, n: int) -> Optional[np.ndarray]:
    if cfg.input_dim == 0:
        return None
    if u_seq is None:
        raise ValueError("config has input_dim > 0 but no input sequence was given")
    u = np.asarray(u_seq, dtype=np.complex128)
    if u.shape != (n, cfg.input_dim):
        raise ValueError(f"input sequence must have shape ({n}, {cfg.input_dim}), got {u.shape}")
    return u


def _teacher_forced(m, cfg, teacher: np.ndarray, y0: np.ndarray, u: Optional[np.ndarray],
                    x0: np.ndarray) -> np.ndarray:
    """States x(1..T); x(t) sees feedback y(t-1) with y(0) = ``y0``."""
    T, N = teacher.shape[0], cfg.n_internal
    a, f = cfg.leak_rate, cfg.activation
    states = np.empty((T, N), dtype=np.complex128)
    x = np.asarray(x0, dtype=np.complex128).copy()
    feedback_src = np.vstack([y0[None, :], teacher[:-1]])
    for start in range(0, T, _CHUNK):
        stop = min(start + _CHUNK, T)
        # teacher feedback is known ahead of time, so batch it as one GEMM
        drive = _rmul(m.W_back, feedback_src[start:stop].T)
        if u is not None:
            drive += _rmul(m.W_in, u[start:stop].T)
        for i in range(start, stop):
            x = (1.0 - a) * x + a * activation(f, _rmul(m.W, x) + drive[:, i - start])
            states[i] = x
    return states


def collect_states(m: ReservoirMatrices, cfg: ReservoirConfig, teacher, u_seq=None,
                   y0=None, x0=None) -> np.ndarray:
    """Teacher-forced states for t = t_min+1 .. T, one row per step."""
    _check_dims(m, cfg)
    teacher = _as_frames(teacher, cfg.output_dim, "teacher")
    T = teacher.shape[0]
    if T <= cfg.t_min:
        raise TrainingError(f"teacher has {T} steps, not more than t_min = {cfg.t_min}")
    y0 = teacher[0] if y0 is None else np.asarray(y0, dtype=np.complex128)
    x0 = np.zeros(cfg.n_internal, np.complex128) if x0 is None else x0
    return _teacher_forced(m, cfg, teacher, y0, _inputs(cfg, u_seq, T), x0)[cfg.t_min:]


def fit_ridge_complex(X: np.ndarray, Y: np.ndarray, gamma: float) -> Readout:
    """Solve ``(X^H X + gamma I) W_out^T = X^H Y`` by Cholesky factorization."""
    X = np.asarray(X, dtype=np.complex128)
    Y = np.asarray(Y, dtype=np.complex128)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 1:
        raise ValueError(f"incompatible regression shapes X{X.shape}, Y{Y.shape}")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    # upper triangle of X^H X
    gram = zherk(1.0, X, trans=2, lower=0)
    gram[np.diag_indices_from(gram)] += gamma
    rhs = X.conj().T @ Y
    try:
        factor = sla.cho_factor(gram, lower=False, overwrite_a=True, check_finite=False)
        coef = sla.cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        hint = "; use ridge gamma > 0" if gamma == 0 else ""
        raise TrainingError(f"normal equations are singular or indefinite (gamma={gamma:g}){hint}") from None
    if not np.all(np.isfinite(coef)):
        raise TrainingError("ridge solution is not finite; increase gamma")
    return Readout(np.ascontiguousarray(coef.T))


def _closed_loop(m, cfg, W_out: np.ndarray, x: np.ndarray, y: np.ndarray, n: int,
                 u: Optional[np.ndarray], keep_states: bool):
    N, L = cfg.n_internal, cfg.output_dim
    a, f = cfg.leak_rate, cfg.activation
    preds = np.empty((n, L), dtype=np.complex128)
    states = np.empty((n, N), dtype=np.complex128) if keep_states else None
    x = np.asarray(x, dtype=np.complex128).copy()
    y = np.asarray(y, dtype=np.complex128).copy()
    for i in range(n):
        pre = _rmul(m.W, x) + _rmul(m.W_back, y)
        if u is not None:
            pre += _rmul(m.W_in, u[i])
        x = (1.0 - a) * x + a * activation(f, pre)
        # overflow is caught just below as a divergence
        with np.errstate(over="ignore", invalid="ignore"):
            y = W_out @ x
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite prediction at free-run step {i + 1}",
                                  step=i + 1, partial=preds[:i].copy())
        preds[i] = y
        if keep_states:
            states[i] = x
    return preds, x, states


def free_run(m: ReservoirMatrices, cfg: ReservoirConfig, readout: Readout,
             x_start: ReservoirState, y_start, n_steps: int, u_seq=None,
             return_states: bool = False):
    """Autonomous prediction: each step feeds back the previous prediction.

    Returns ``(predictions, final_state)``, plus the visited states when
    ``return_states`` is set.  Predictions has shape ``(n_steps, L)``.
    """
    _check_dims(m, cfg)
    if readout is None:
        raise TrainingError("free run needs a trained readout")
    if readout.W_out.shape != (cfg.output_dim, cfg.n_internal):
        raise ValueError(f"readout shape {readout.W_out.shape} does not match config")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    y_start = np.asarray(y_start, dtype=np.complex128)
    if y_start.shape != (cfg.output_dim,):
        raise ValueError(f"y_start must have length {cfg.output_dim}")
    u = _inputs(cfg, u_seq, n_steps)
    preds, x, states = _closed_loop(m, cfg, readout.W_out, x_start.x, y_start, n_steps, u,
                                    return_states)
    final = ReservoirState(x, x_start.t + n_steps)
    if return_states:
        return preds, final, states
    return preds, final


def _mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(pred - target) ** 2))


def _prepare(m, cfg, teacher, u_seq, y0):
    _check_dims(m, cfg)
    teacher = _as_frames(teacher, cfg.output_dim, "teacher")
    y0 = teacher[0] if y0 is None else np.asarray(y0, dtype=np.complex128)
    return teacher, y0, _inputs(cfg, u_seq, teacher.shape[0])


def train_standard(m: ReservoirMatrices, cfg: ReservoirConfig, teacher, u_seq=None, y0=None):
    """Teacher-force the whole range, then one ridge fit.  Returns ``(Readout, TrainingRecord)``."""
    teacher, y0, u = _prepare(m, cfg, teacher, u_seq, y0)
    T = teacher.shape[0]
    if T <= cfg.t_min + 10:
        raise TrainingError(f"teacher has {T} steps; need more than t_min + 10 = {cfg.t_min + 10}")
    states = _teacher_forced(m, cfg, teacher, y0, u, np.zeros(cfg.n_internal, np.complex128))
    X, Y = states[cfg.t_min:], teacher[cfg.t_min:]
    readout = fit_ridge_complex(X, Y, cfg.ridge)
    record = TrainingRecord(
        mode="standard", n_targets=T, t1=None, phase1_range=(cfg.t_min + 1, T), phase2_range=None,
        train_mse_phase1=_mse(X @ readout.W_out.T, Y), train_mse_phase2=None,
        state_matrix_shape=X.shape, final_state=ReservoirState(states[-1].copy(), T))
    return readout, record


def train_multistep(m: ReservoirMatrices, cfg: ReservoirConfig, teacher, u_seq=None, y0=None):
    """Two-phase training.

    1. split targets at ``t1 = floor(split * T)``;
    2. teacher-force phase 1 and fit a provisional readout on states t_min+1..t1;
    3. free-run the provisional readout over phase 2 so states t1+1..T carry
       its prediction errors;
    4. refit on all retained states against the true targets.

    The record's ``final_state`` is the teacher-forced x(T) so both trainers
    hand the same seed state to the test phase.
    """
    teacher, y0, u = _prepare(m, cfg, teacher, u_seq, y0)
    T = teacher.shape[0]
    t1 = math.floor(cfg.multistep_split * T)
    if t1 <= cfg.t_min or t1 >= T:
        raise TrainingError(
            f"degenerate split: t1 = {t1} with T = {T}, t_min = {cfg.t_min} leaves an empty phase")
    zero = np.zeros(cfg.n_internal, np.complex128)
    states1 = _teacher_forced(m, cfg, teacher[:t1], y0, None if u is None else u[:t1], zero)
    X1, Y1 = states1[cfg.t_min:], teacher[cfg.t_min:t1]
    provisional = fit_ridge_complex(X1, Y1, cfg.ridge)

    x_t1 = ReservoirState(states1[-1].copy(), t1)
    u2 = None if u is None else u[t1:]
    preds2, _, states2 = free_run(m, cfg, provisional, x_t1, teacher[t1 - 1], T - t1, u2,
                                  return_states=True)
    X = np.vstack([X1, states2])
    readout = fit_ridge_complex(X, teacher[cfg.t_min:], cfg.ridge)

    tail = _teacher_forced(m, cfg, teacher[t1:], teacher[t1 - 1], u2, states1[-1])
    record = TrainingRecord(
        mode="multistep", n_targets=T, t1=t1, phase1_range=(cfg.t_min + 1, t1),
        phase2_range=(t1 + 1, T), train_mse_phase1=_mse(X1 @ provisional.W_out.T, Y1),
        train_mse_phase2=_mse(preds2, teacher[t1:]), state_matrix_shape=X.shape,
        final_state=ReservoirState(tail[-1].copy(), T), provisional_readout=provisional,
        phase2_states=states2)
    return readout, record


# -- persistence -------------------------------------------------------------

@dataclass
class ReservoirModel:
    config: ReservoirConfig
    matrices: ReservoirMatrices
    readout: Readout

    def free_run(self, x_start: ReservoirState, y_start, n_steps: int, u_seq=None):
        return free_run(self.matrices, self.config, self.readout, x_start, y_start, n_steps, u_seq)

    def warm_up(self, frames, u_seq=None) -> ReservoirState:
        """Teacher-force through ``frames`` (frame 0 is y(0)) and return x(T)."""
        frames = _as_frames(frames, self.config.output_dim, "seed trajectory")
        if frames.shape[0] < 2:
            raise TrainingError("seed trajectory needs at least two frames")
        u = _inputs(self.config, u_seq, frames.shape[0] - 1)
        states = _teacher_forced(self.matrices, self.config, frames[1:], frames[0], u,
                                 np.zeros(self.config.n_internal, np.complex128))
        return ReservoirState(states[-1].copy(), frames.shape[0] - 1)


def save_model(path, model: ReservoirModel) -> None:
    m = model.matrices
    formats.atomic_write_bytes(
        path, formats.encode_model(model.config.to_dict(), m.W, m.W_back, m.W_in, model.readout.W_out))


def load_model(path) -> ReservoirModel:
    cfg_dict, W, W_back, W_in, W_out = formats.decode_model(Path(path).read_bytes(), what=str(path))
    try:
        cfg = ReservoirConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        raise formats.FormatError(f"{path}: invalid reservoir config ({exc})") from None
    return ReservoirModel(cfg, ReservoirMatrices(W, W_back, W_in), Readout(W_out))


def config_json(cfg: ReservoirConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
