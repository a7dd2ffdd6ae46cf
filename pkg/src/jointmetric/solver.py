"""Alternating projected subgradient training, baselines and cross-validation.

``mode="joint"`` learns the shared ``L`` and per-view ``M_t``. The two
baselines reuse the same machinery:

* ``independent`` trains every view on its own. By default each view gets
  a factored embedding ``M = L_t L_t^T`` (``L_t`` is ``N x D``, trace
  penalty ``lambda ||L_t||_F^2``); with ``full_psd`` each view learns a
  full ``H x H`` PSD matrix with ``L = I``.
* ``pooled`` merges all views' triplets and trains one metric, in the
  same two parametrizations.

Baseline regularization uses ``lambda = beta * gamma``, so one product grid
serves every method.
"""

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import DataError, DegenerateScaleError, DivergedError, NumericError
from .loss import backproject, data_loss, embed
from .model import project_psd, regularizer_value, rescale_balance

MODES = ("joint", "independent", "pooled")
DEFAULT_GRID = tuple(10.0**p for p in range(-5, 6))
DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class SolverConfig:
    dim: int = 10
    beta: float = 1.0
    gamma: float = 1.0
    eta0: float = 1e-2
    m_max: int = 20
    outer_max: int = 500
    rel_tol: float = 1e-5
    mode: str = "joint"
    seed: int = 0
    deterministic: bool = False
    full_psd: bool = False
    freeze_L: bool = False
    threads: int = 1
    eta_backoff: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dim < 1 or self.m_max < 1 or self.outer_max < 1:
            raise ValueError("dim, m_max and outer_max must be >= 1")
        if self.rel_tol < 0 or self.eta0 <= 0 or self.eta_backoff < 0:
            raise ValueError("rel_tol and eta_backoff must be >= 0, eta0 > 0")
        if not (self.beta > 0 and self.gamma > 0):
            raise ValueError("beta and gamma must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Learned ``L`` and metrics ``Ms``; view ``t`` has kernel ``L @ Ms[t] @ L.T``.

    Independent factored baselines are stored in the same form: ``L`` is
    the column-stack of the per-view embeddings and ``Ms[t]`` selects the
    block of view ``t``.
    """

    L: np.ndarray
    Ms: tuple
    objective_trace: tuple
    config: SolverConfig

    @property
    def num_views(self):
        return len(self.Ms)

    @property
    def input_dim(self):
        return self.L.shape[0]

    @property
    def num_parameters(self):
        """Free parameter count: ``HD + TD^2`` joint, ``THD`` independent, ``HD`` pooled."""
        H, T, D = self.input_dim, self.num_views, self.config.dim
        mode = self.config.mode
        if self.config.full_psd or self.config.freeze_L:
            D = H
        if mode == "joint":
            return (0 if self.config.freeze_L else H * D) + T * D * D
        if mode == "independent":
            return T * H * D
        return H * D

    def coordinates(self, t, X=None):
        """``Z`` with ``Z @ Z.T = X K_t X^T``: view ``t``'s Euclidean embedding."""
        Y = embed(self.L, X)
        w, V = np.linalg.eigh(self.Ms[t])
        keep = w > 0
        return Y @ (V[:, keep] * np.sqrt(w[keep]))

    def kernel(self, t):
        return self.L @ self.Ms[t] @ self.L.T

    def squared_distances(self, t, X=None):
        Z = self.coordinates(t, X)
        sq = np.einsum("nd,nd->n", Z, Z)
        D = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
        np.fill_diagonal(D, 0.0)
        return np.maximum(D, 0.0)


@dataclass
class _View:
    triplets: np.ndarray
    X: np.ndarray = None
    pairs: np.ndarray = None
    mu: float = 0.0
    coord: bool = False  # L frozen at I with featureless objects: Y = I_N


def _objective(views, L, Ms, beta, gamma, reg_L, reg_M):
    total = 0.0
    for v, M in zip(views, Ms):
        if v.coord:
            total += kernels.coord_hinge_loss(M, v.triplets)
            continue
        Y = embed(L, v.X)
        total += kernels.hinge_loss(Y, M, v.triplets)
        if v.mu and v.pairs is not None:
            total += v.mu * kernels.pull_loss_grad_M(Y, M, v.pairs)[0]
    if reg_M:
        total += gamma * sum(float(np.trace(M)) for M in Ms)
    if reg_L:
        total += beta * float(np.sum(L * L))
    return total


def _L_phase(views, L, Ms, beta, cfg):
    det = cfg.deterministic
    for m in range(1, cfg.m_max + 1):
        eta = cfg.eta0 / math.sqrt(m)
        G = 2.0 * beta * L
        for v, M in zip(views, Ms):
            Y = embed(L, v.X)
            _, GY = kernels.hinge_grad_Y(Y, M, v.triplets, det)
            if v.mu and v.pairs is not None:
                GY = GY + v.mu * kernels.pull_loss_grad_Y(Y, M, v.pairs)[1]
            G = G + backproject(GY, v.X)
        L = L - eta * G
    return L


def _M_phase(v, L, M, gamma, cfg):
    D = M.shape[0]
    ridge = gamma * np.eye(D)
    Y = None if v.coord else embed(L, v.X)
    pull = None
    if not v.coord and v.mu and v.pairs is not None:
        pull = v.mu * kernels.pull_loss_grad_M(Y, M, v.pairs)[1]
    for m in range(1, cfg.m_max + 1):
        eta = cfg.eta0 / math.sqrt(m)
        if v.coord:
            _, G = kernels.coord_hinge_grad_M(M, v.triplets)
        else:
            _, G = kernels.hinge_grad_M(Y, M, v.triplets, cfg.deterministic)
        if pull is not None:
            G = G + pull
        M = project_psd(M - eta * (G + ridge))
    return M


def _fit(views, L, Ms, beta, gamma, cfg, update_L=True, update_M=True, progress=None):
    """Run the alternating scheme; returns ``(L, Ms, trace)``.

    On divergence the run restarts from the same initial point with
    ``eta0`` halved, at most ``cfg.eta_backoff`` times.
    """
    for attempt in range(cfg.eta_backoff + 1):
        try:
            return _fit_once(views, L, Ms, beta, gamma, cfg, update_L, update_M, progress)
        except DivergedError:
            if attempt == cfg.eta_backoff:
                raise
            cfg = cfg.replace(eta0=cfg.eta0 / 2.0)


def _fit_once(views, L, Ms, beta, gamma, cfg, update_L, update_M, progress):
    Ms = list(Ms)
    f0 = _objective(views, L, Ms, beta, gamma, update_L, update_M)
    if not math.isfinite(f0):
        raise DivergedError(0, f0)
    trace = [f0]
    prev = f0
    start = time.perf_counter()
    pool = None
    if update_M and not cfg.deterministic and cfg.threads > 1 and len(views) > 1:
        pool = ThreadPoolExecutor(max_workers=cfg.threads)
    # overflow surfaces as a non-finite objective and is reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for it in range(1, cfg.outer_max + 1):
                try:
                    if update_L:
                        L = _L_phase(views, L, Ms, beta, cfg)
                    if update_M:
                        if pool is not None:
                            Ms = list(pool.map(lambda vm: _M_phase(vm[0], L, vm[1], gamma, cfg), zip(views, Ms)))
                        else:
                            Ms = [_M_phase(v, L, M, gamma, cfg) for v, M in zip(views, Ms)]
                except NumericError:
                    raise DivergedError(it, float("nan")) from None
                f = _objective(views, L, Ms, beta, gamma, update_L, update_M)
                if not math.isfinite(f) or f > DIVERGENCE_FACTOR * max(abs(f0), 1e-12):
                    raise DivergedError(it, f)
                rel = (prev - f) / max(abs(prev), 1e-300)
                trace.append(f)
                if progress is not None:
                    elapsed = int((time.perf_counter() - start) * 1000)
                    progress.write(f"{it} {f:.17g} {rel:.6e} {elapsed}\n")
                prev = f
                if abs(rel) < cfg.rel_tol:
                    break
        finally:
            if pool is not None:
                pool.shutdown()
    return L, Ms, trace


def _init_L(H, D, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((H, D)) / math.sqrt(D)


def _check_data(data):
    if data.num_views < 1 or data.num_triplets < 1:
        raise DataError("dataset has no triplets")


def _merge_traces(traces):
    n = max(len(t) for t in traces)
    padded = [list(t) + [t[-1]] * (n - len(t)) for t in traces]
    return tuple(float(x) for x in np.sum(padded, axis=0))


def _train_views(views, H, cfg, progress=None):
    """Joint training on prepared views (shared by :func:`train` and the supervised path)."""
    kernels.set_threads(cfg.threads)
    if cfg.freeze_L:
        L = np.eye(H)
        Ms = [np.eye(H) for _ in views]
        L, Ms, trace = _fit(views, L, Ms, cfg.beta, cfg.gamma, cfg, update_L=False, progress=progress)
        return TrainedModel(L, tuple(Ms), tuple(trace), cfg)
    if cfg.dim > H:
        raise DataError(f"embedding dimension {cfg.dim} exceeds input dimension {H}")
    L = _init_L(H, cfg.dim, cfg.seed)
    Ms = [np.eye(cfg.dim) for _ in views]
    L, Ms, trace = _fit(views, L, Ms, cfg.beta, cfg.gamma, cfg, progress=progress)
    try:
        L, Ms = rescale_balance(L, Ms, cfg.beta, cfg.gamma)
    except DegenerateScaleError:
        pass
    return TrainedModel(L, tuple(Ms), tuple(trace), cfg)


def _single_metric(view, H, cfg, progress=None):
    """One baseline metric on one triplet set; returns ``(L, M, trace)``."""
    lam = cfg.beta * cfg.gamma
    if cfg.full_psd:
        L = np.eye(H)
        L, Ms, trace = _fit([view], L, [np.eye(H)], cfg.beta, lam, cfg, update_L=False, progress=progress)
        return L, Ms[0], trace
    if cfg.dim > H:
        raise DataError(f"embedding dimension {cfg.dim} exceeds input dimension {H}")
    L = _init_L(H, cfg.dim, cfg.seed)
    L, _, trace = _fit([view], L, [np.eye(cfg.dim)], lam, cfg.gamma, cfg, update_M=False, progress=progress)
    return L, np.eye(cfg.dim), trace


def train(data, cfg, progress=None):
    """Fit a model to a :class:`~jointmetric.data.TripletDataset`.

    ``progress``, if given, is a text stream receiving one
    ``iter objective rel_change elapsed_ms`` line per outer iteration.

    Raises
    ------
    DataError
        If the dataset has no triplets or ``cfg.dim`` exceeds the input dimension.
    DivergedError
        If the objective becomes non-finite or exceeds 1e3 times its initial value.
    """
    _check_data(data)
    kernels.set_threads(cfg.threads)
    X = data.features
    H = data.input_dim
    coord = X is None and (cfg.freeze_L or cfg.full_psd)

    if cfg.mode == "joint":
        views = [_View(S, X, coord=coord and cfg.freeze_L) for S in data.triplets]
        return _train_views(views, H, cfg, progress)

    if cfg.mode == "pooled":
        merged = np.concatenate(data.triplets, axis=0)
        L, M, trace = _single_metric(_View(merged, X, coord=coord), H, cfg, progress)
        return TrainedModel(L, tuple(M for _ in range(data.num_views)), tuple(trace), cfg)

    # independent: T separate single-view runs with the same seed
    blocks, mats, traces = [], [], []
    for S in data.triplets:
        if len(S) == 0:
            raise DataError("independent learning needs triplets in every view")
        L_t, M_t, trace = _single_metric(_View(S, X, coord=coord), H, cfg, progress)
        blocks.append(L_t)
        mats.append(M_t)
        traces.append(trace)
    if cfg.full_psd:
        return TrainedModel(np.eye(H), tuple(mats), _merge_traces(traces), cfg)
    D, T = cfg.dim, data.num_views
    Ms = []
    for t in range(T):
        sel = np.zeros((T * D, T * D))
        sel[t * D : (t + 1) * D, t * D : (t + 1) * D] = np.eye(D)
        Ms.append(sel)
    return TrainedModel(np.hstack(blocks), tuple(Ms), _merge_traces(traces), cfg)


def objective(data, L, Ms, beta, gamma):
    """Full joint objective: hinge losses of every view plus the regulariser."""
    return data_loss(L, Ms, data.triplets, data.features) + regularizer_value(L, Ms, beta, gamma)


@dataclass(frozen=True)
class CVResult:
    best: float
    errors: dict  # candidate product -> mean validation error (None if diverged)


def fold_assignment(data, folds=5, seed=0):
    """Per-view fold index of every triplet, uniformly at random."""
    rng = np.random.default_rng(seed)
    out = []
    for S in data.triplets:
        asg = np.empty(len(S), dtype=np.int64)
        asg[rng.permutation(len(S))] = np.arange(len(S)) % folds
        out.append(asg)
    return out


def cross_validate(data, cfg_base, grid=DEFAULT_GRID, folds=5, seed=None):
    """Pick the regularization product ``beta * gamma`` by k-fold CV.

    ``beta`` is fixed to 1 and ``gamma`` set to each candidate. Validation
    error is averaged over views and folds; ties go to the smaller product.
    """
    from .evaluation import triplet_error

    grid = sorted(float(c) for c in grid)
    if not grid:
        raise ValueError("grid must not be empty")
    for t, S in enumerate(data.triplets):
        if len(S) < folds:
            raise DataError(f"view {t} has {len(S)} triplets, need at least {folds} for {folds}-fold CV")
    assign = fold_assignment(data, folds, cfg_base.seed if seed is None else seed)
    errors = {}
    for c in grid:
        cfg = cfg_base.replace(beta=1.0, gamma=c)
        fold_err = []
        try:
            for f in range(folds):
                train_set = data.with_triplets(S[a != f] for S, a in zip(data.triplets, assign))
                held = [S[a == f] for S, a in zip(data.triplets, assign)]
                model = train(train_set, cfg)
                fold_err.append(triplet_error(model, held, data.features).mean)
            errors[c] = float(np.mean(fold_err))
        except DivergedError:
            errors[c] = None
    finite = {c: e for c, e in errors.items() if e is not None}
    if not finite:
        raise DivergedError(-1, float("nan"))
    best = min(finite, key=lambda c: (finite[c], c))
    return CVResult(best, errors)
