"""Non-crossing multi-quantile kernel regression fit by dual coordinate ascent.

The estimator fits M conditional quantile functions jointly. Each function is
a kernel expansion f_m(x) = sum_i beta[m,i] K(x, x_i) whose coefficients come
from the dual of the constrained pinball-loss problem:

    beta[m] = (alpha_plus[m] - alpha_minus[m]) - (lam[m] - lam[m-1])

with box constraints 0 <= alpha_plus[m,i] <= tau_m*C and
0 <= alpha_minus[m,i] <= (1-tau_m)*C, and lam[m,i] >= 0 enforcing
f_m(x_i) <= f_{m+1}(x_i) at every training point (lam[0] and lam[M] are
identically zero). The dual is concave; it is maximized by cyclic exact
coordinate ascent with clipping, the natural one-variable-at-a-time scheme
since no equality constraint couples the variables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .dataset import MinMaxScaler, apply_minmax
from .kernels import RBF, KernelSpec, gram, gram_cross

MODEL_FORMAT = "csvqr-model"
MODEL_FORMAT_VERSION = 1

# Diagonal entries at or below this are treated as exactly zero curvature.
# For PSD Gram matrices a zero diagonal entry forces the whole row to zero.
_CURVATURE_FLOOR = 1e-12


@dataclass(frozen=True)
class QuantileLevels:
    """Strictly increasing nominal proportions 0 < tau_1 < ... < tau_M < 1."""

    levels: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(t) for t in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 1:
            raise ValueError("at least one quantile level is required")
        if levels[0] <= 0.0 or levels[-1] >= 1.0:
            raise ValueError("levels must lie strictly inside (0,1)")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")

    @classmethod
    def deciles(cls) -> "QuantileLevels":
        return cls(tuple(round(0.1 * k, 10) for k in range(1, 10)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    def index_of(self, tau: float) -> int:
        for i, t in enumerate(self.levels):
            if abs(t - tau) <= 1e-9:
                return i
        raise ValueError(f"level {tau} is not in the quantile grid {self.levels}")

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)


@dataclass(frozen=True)
class CsvqrConfig:
    """Solver settings; ``tol=None`` resolves to 1e-3 * C at fit time."""

    C: float = 1.0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec(RBF, sqrt(13.0)))
    tol: float | None = None
    max_iter: int = 200

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def resolved_tol(self) -> float:
        return self.tol if self.tol is not None else 1e-3 * self.C


@dataclass(frozen=True)
class DualSolution:
    """Dual variables: alpha arrays are (M, N); lam is (M-1, N)."""

    alpha_plus: np.ndarray
    alpha_minus: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        ap = np.asarray(self.alpha_plus, dtype=float)
        am = np.asarray(self.alpha_minus, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        if ap.ndim != 2 or ap.shape != am.shape:
            raise ValueError("alpha_plus and alpha_minus must share an (M, N) shape")
        M, N = ap.shape
        if lam.shape != (max(M - 1, 0), N):
            raise ValueError(f"lam must have shape ({M - 1}, {N}), got {lam.shape}")
        for arr, name in ((ap, "alpha_plus"), (am, "alpha_minus"), (lam, "lam")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_levels(self) -> int:
        return self.alpha_plus.shape[0]

    @property
    def n_points(self) -> int:
        return self.alpha_plus.shape[1]

    def coefficients(self) -> np.ndarray:
        """(M, N) kernel-expansion coefficients beta."""
        return (self.alpha_plus - self.alpha_minus) - _lambda_diff(self.lam, *self.alpha_plus.shape)

    def is_feasible(self, levels: QuantileLevels, C: float, atol: float = 0.0) -> bool:
        taus = levels.as_array()[:, None]
        ok = (self.alpha_plus >= -atol).all() and (self.alpha_plus <= taus * C + atol).all()
        ok = ok and (self.alpha_minus >= -atol).all() and (self.alpha_minus <= (1 - taus) * C + atol).all()
        return bool(ok and (self.lam >= -atol).all())


def zero_dual(M: int, N: int) -> DualSolution:
    return DualSolution(np.zeros((M, N)), np.zeros((M, N)), np.zeros((max(M - 1, 0), N)))


def _lambda_diff(lam: np.ndarray, M: int, N: int) -> np.ndarray:
    """(M, N) matrix of lam[m] - lam[m-1] with lam[0] = lam[M] = 0."""
    pad = np.zeros((M + 1, N))
    if M > 1:
        pad[1:M] = lam
    return pad[1:] - pad[:-1]


def _check_problem_shapes(dual: DualSolution, G: np.ndarray, y: np.ndarray,
                          levels: QuantileLevels) -> None:
    N = y.shape[0]
    if G.shape != (N, N):
        raise ValueError(f"Gram matrix shape {G.shape} does not match {N} targets")
    if dual.n_points != N or dual.n_levels != len(levels):
        raise ValueError("dual solution shape does not match the problem")


def dual_objective(dual: DualSolution, G, y, levels: QuantileLevels, C: float) -> float:
    """Concave dual value; maximized by the solver.

    Per quantile m, with a = alpha_plus[m]-alpha_minus[m] and
    l = lam[m]-lam[m-1]:

        -1/2 a'Ga + a'y - 1/2 l'Gl + a'Gl

    The value does not depend on ``levels`` or ``C``; they participate in
    shape validation only. Feasibility is deliberately not enforced so that
    finite-difference probes just outside the box remain well defined.
    """
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_problem_shapes(dual, G, y, levels)
    A = dual.alpha_plus - dual.alpha_minus
    L = _lambda_diff(dual.lam, dual.n_levels, dual.n_points)
    GA = A @ G
    GL = L @ G
    total = (-0.5 * np.sum(GA * A, axis=1) + A @ y
             - 0.5 * np.sum(GL * L, axis=1) + np.sum(GA * L, axis=1))
    return float(total.sum())


def _fitted_values(dual: DualSolution, G: np.ndarray) -> np.ndarray:
    """(M, N) matrix F with F[m, i] = f_m(x_i) on the training inputs."""
    return dual.coefficients() @ G


def dual_gradient(dual: DualSolution, G, y, levels: QuantileLevels, C: float):
    """Gradient of the dual objective, shaped like the dual variables.

    Returns (g_alpha_plus, g_alpha_minus, g_lam):
        g_alpha_plus[m, i]  =  y_i - f_m(x_i)
        g_alpha_minus[m, i] =  f_m(x_i) - y_i
        g_lam[m, i]         =  f_m(x_i) - f_{m+1}(x_i)
    """
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_problem_shapes(dual, G, y, levels)
    F = _fitted_values(dual, G)
    gp = y[None, :] - F
    return gp, -gp, F[:-1] - F[1:]


def _kkt_from_parts(F, y, ap, am, lam, cap_p, cap_m) -> float:
    """Max projected-gradient magnitude over all dual variables."""
    gp = y[None, :] - F
    gm = -gp
    vp = np.where(ap <= 0.0, np.maximum(gp, 0.0),
                  np.where(ap >= cap_p[:, None], np.maximum(-gp, 0.0), np.abs(gp)))
    vm = np.where(am <= 0.0, np.maximum(gm, 0.0),
                  np.where(am >= cap_m[:, None], np.maximum(-gm, 0.0), np.abs(gm)))
    worst = max(float(vp.max()), float(vm.max()))
    if lam.shape[0]:
        gl = F[:-1] - F[1:]
        vl = np.where(lam <= 0.0, np.maximum(gl, 0.0), np.abs(gl))
        worst = max(worst, float(vl.max()))
    return worst


def kkt_violation(dual: DualSolution, G, y, levels: QuantileLevels, C: float) -> float:
    """Stationarity certificate: 0 iff the feasible dual cannot be improved."""
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_problem_shapes(dual, G, y, levels)
    taus = levels.as_array()
    return _kkt_from_parts(_fitted_values(dual, G), y,
                           dual.alpha_plus, dual.alpha_minus, dual.lam,
                           taus * C, (1.0 - taus) * C)


@dataclass(frozen=True)
class CsvqrModel:
    """Frozen fit artifact; everything needed to evaluate the quantile curves."""

    support_features: np.ndarray
    dual: DualSolution
    levels: QuantileLevels
    config: CsvqrConfig
    scaler: MinMaxScaler | None = None
    converged: bool = True
    kkt: float = 0.0
    n_sweeps: int = 0
    objective_history: tuple[float, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.support_features, dtype=float)
        if X.ndim != 2:
            raise ValueError("support_features must be 2-D")
        if X.shape[0] != self.dual.n_points or len(self.levels) != self.dual.n_levels:
            raise ValueError("model dimensions are inconsistent")
        X.setflags(write=False)
        object.__setattr__(self, "support_features", X)

    def coefficients(self) -> np.ndarray:
        return self.dual.coefficients()


def solve(X, y, levels: QuantileLevels, config: CsvqrConfig,
          scaler: MinMaxScaler | None = None, callback=None) -> CsvqrModel:
    """Fit the non-crossing quantile model on an already-scaled matrix X.

    Cyclic sweeps visit each (level, point) alpha pair and then each lam
    entry, applying the exact one-dimensional maximizer clipped to its
    interval. Stops when the max projected gradient drops to ``config.tol``
    (default 1e-3 * C) or after ``config.max_iter`` sweeps, in which case
    the model is returned with ``converged=False`` and a warning.

    ``callback(sweep, dual, objective, kkt)`` runs after every sweep when
    provided; it is meant for tests and diagnostics.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X {X.shape} and y {y.shape} do not align")
    if X.shape[0] < 1:
        raise ValueError("at least one training point is required")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in the training data")

    taus = levels.as_array()
    M, N = len(levels), y.shape[0]
    C = float(config.C)
    tol = config.resolved_tol()
    G = gram(config.kernel, X)
    diag = np.ascontiguousarray(np.diag(G))

    ap = np.zeros((M, N))
    am = np.zeros((M, N))
    lam = np.zeros((max(M - 1, 0), N))
    F = np.zeros((M, N))
    cap_p = taus * C
    cap_m = (1.0 - taus) * C

    history: list[float] = []
    converged = False
    kkt = np.inf
    sweeps_done = 0
    for sweep in range(config.max_iter):
        _sweep_alpha(G, diag, y, ap, am, F, cap_p, cap_m)
        _sweep_lambda(G, diag, lam, F)
        # Refresh F from scratch so axpy round-off cannot accumulate across
        # sweeps, then evaluate the stopping rule on exact quantities.
        beta = (ap - am) - _lambda_diff(lam, M, N)
        F = beta @ G
        kkt = _kkt_from_parts(F, y, ap, am, lam, cap_p, cap_m)
        objective = float(np.sum(-0.5 * np.sum(beta * F, axis=1) + (ap - am) @ y))
        history.append(objective)
        sweeps_done = sweep + 1
        if callback is not None:
            callback(sweep, DualSolution(ap.copy(), am.copy(), lam.copy()), objective, kkt)
        if kkt <= tol:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"csvqr solve stopped after {sweeps_done} sweeps with KKT violation "
            f"{kkt:.3g} > tol {tol:.3g}", RuntimeWarning, stacklevel=2)

    dual = DualSolution(ap, am, lam)
    return CsvqrModel(support_features=X, dual=dual, levels=levels, config=config,
                      scaler=scaler, converged=converged, kkt=float(kkt),
                      n_sweeps=sweeps_done, objective_history=tuple(history))


def _sweep_alpha_numpy(G, diag, y, ap, am, F, cap_p, cap_m):
    M, N = ap.shape
    for m in range(M):
        Fm = F[m]
        apm = ap[m]
        amm = am[m]
        hi_p = cap_p[m]
        hi_m = cap_m[m]
        for i in range(N):
            gii = diag[i]
            r = y[i] - Fm[i]
            if gii <= _CURVATURE_FLOOR:
                # Zero curvature: the slice is linear, so jump to the box end
                # the gradient favors. The Gram row is zero, so F is unchanged.
                if r > 0.0:
                    apm[i] = hi_p
                    amm[i] = 0.0
                elif r < 0.0:
                    apm[i] = 0.0
                    amm[i] = hi_m
                continue
            new_p = apm[i] + r / gii
            if new_p < 0.0:
                new_p = 0.0
            elif new_p > hi_p:
                new_p = hi_p
            dp = new_p - apm[i]
            r -= dp * gii
            new_m = amm[i] - r / gii
            if new_m < 0.0:
                new_m = 0.0
            elif new_m > hi_m:
                new_m = hi_m
            dm = new_m - amm[i]
            apm[i] = new_p
            amm[i] = new_m
            d = dp - dm
            if d != 0.0:
                Fm += d * G[i]


def _sweep_lambda_numpy(G, diag, lam, F):
    K, N = lam.shape
    for k in range(K):
        Fk = F[k]
        Fk1 = F[k + 1]
        lamk = lam[k]
        for i in range(N):
            gii = diag[i]
            if gii <= _CURVATURE_FLOOR:
                continue  # zero Gram row: this multiplier has no effect
            g = Fk[i] - Fk1[i]
            new = lamk[i] + g / (2.0 * gii)
            if new < 0.0:
                new = 0.0
            d = new - lamk[i]
            if d != 0.0:
                lamk[i] = new
                row = G[i]
                Fk -= d * row
                Fk1 += d * row


def _sweep_alpha_loops(G, diag, y, ap, am, F, cap_p, cap_m):
    # Same update rule as _sweep_alpha_numpy, written with explicit inner
    # loops so numba can compile it without temporaries.
    M, N = ap.shape
    for m in range(M):
        hi_p = cap_p[m]
        hi_m = cap_m[m]
        for i in range(N):
            gii = diag[i]
            r = y[i] - F[m, i]
            if gii <= _CURVATURE_FLOOR:
                if r > 0.0:
                    ap[m, i] = hi_p
                    am[m, i] = 0.0
                elif r < 0.0:
                    ap[m, i] = 0.0
                    am[m, i] = hi_m
                continue
            new_p = ap[m, i] + r / gii
            if new_p < 0.0:
                new_p = 0.0
            elif new_p > hi_p:
                new_p = hi_p
            dp = new_p - ap[m, i]
            r -= dp * gii
            new_m = am[m, i] - r / gii
            if new_m < 0.0:
                new_m = 0.0
            elif new_m > hi_m:
                new_m = hi_m
            dm = new_m - am[m, i]
            ap[m, i] = new_p
            am[m, i] = new_m
            d = dp - dm
            if d != 0.0:
                for j in range(N):
                    F[m, j] += d * G[i, j]


def _sweep_lambda_loops(G, diag, lam, F):
    K, N = lam.shape
    for k in range(K):
        for i in range(N):
            gii = diag[i]
            if gii <= _CURVATURE_FLOOR:
                continue
            g = F[k, i] - F[k + 1, i]
            new = lam[k, i] + g / (2.0 * gii)
            if new < 0.0:
                new = 0.0
            d = new - lam[k, i]
            if d != 0.0:
                lam[k, i] = new
                for j in range(N):
                    F[k, j] -= d * G[i, j]
                    F[k + 1, j] += d * G[i, j]


try:  # optional accelerator; the numpy path is the reference implementation
    from numba import njit as _njit

    _sweep_alpha = _njit(cache=True)(_sweep_alpha_loops)
    _sweep_lambda = _njit(cache=True)(_sweep_lambda_loops)
    USING_NUMBA = True
except ImportError:  # pragma: no cover
    _sweep_alpha = _sweep_alpha_numpy
    _sweep_lambda = _sweep_lambda_numpy
    USING_NUMBA = False


def predict(model: CsvqrModel, X_query, clamp: bool = True) -> np.ndarray:
    """(m x M) quantile estimates; column m tracks level tau_m.

    Raw query features pass through the model's scaler when one is attached.
    With ``clamp`` (default), outputs snap to [0,1], the range of normalized
    power; clamping is monotone so it never introduces quantile crossings.
    """
    Xq = np.asarray(X_query, dtype=float)
    if Xq.ndim != 2:
        raise ValueError("X_query must be 2-D")
    if model.scaler is not None:
        Xq = apply_minmax(model.scaler, Xq)
    if Xq.shape[1] != model.support_features.shape[1]:
        raise ValueError(
            f"query has {Xq.shape[1]} columns, model expects "
            f"{model.support_features.shape[1]}")
    Kq = gram_cross(model.config.kernel, model.support_features, Xq)
    Q = Kq @ model.coefficients().T
    if clamp:
        Q = np.clip(Q, 0.0, 1.0)
    return Q


def primal_objective(model: CsvqrModel, X, y) -> float:
    """Objective of the constrained pinball problem at the model's coefficients.

    ``X`` must be in the same (scaled) space that was passed to :func:`solve`;
    no scaler is applied here. Together with :func:`dual_objective` this gives
    the duality-gap certificate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    beta = model.coefficients()
    G = gram(model.config.kernel, model.support_features)
    reg = 0.5 * float(np.sum((beta @ G) * beta))
    K = gram_cross(model.config.kernel, model.support_features, X)
    F = K @ beta.T  # (n, M)
    resid = y[:, None] - F
    xi_p = np.maximum(resid, 0.0)
    xi_m = np.maximum(-resid, 0.0)
    taus = model.levels.as_array()[None, :]
    slack = float(np.sum(taus * xi_p + (1.0 - taus) * xi_m))
    return reg + model.config.C * slack


def crossing_count(Q: np.ndarray, slack: float = 1e-6) -> int:
    """Number of rows with any adjacent quantile inversion beyond ``slack``."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape[1] < 2:
        return 0
    violated = (Q[:, :-1] - Q[:, 1:]) > slack
    return int(violated.any(axis=1).sum())


def predict_intervals(quantiles, levels: QuantileLevels, pairs):
    """Per-pair [lower, upper] interval series from a quantile matrix.

    Each pair (tau_l, tau_u) with tau_l < tau_u must name levels present in
    the grid; nominal coverage of the pair is 100 (tau_u - tau_l) percent.
    Returns a dict mapping each pair to an (n, 2) array.
    """
    Q = np.asarray(quantiles, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != len(levels):
        raise ValueError("quantile matrix width must equal the number of levels")
    out = {}
    for lo, hi in pairs:
        if lo >= hi:
            raise ValueError(f"interval pair ({lo}, {hi}): lower level must be below upper")
        i, j = levels.index_of(lo), levels.index_of(hi)
        out[(lo, hi)] = np.stack([Q[:, i], Q[:, j]], axis=1)
    return out


def save_model(model: CsvqrModel, path) -> None:
    """Serialize to a single-file NumPy ``.npz`` archive with a version tag.

    Fields: format/version tags, kernel kind and sigma, C, tol, max_iter,
    levels, the three dual arrays, the scaled support features, optional
    scaler bounds, and fit diagnostics. The exact filename is honored.
    """
    payload = {
        "format": np.array(MODEL_FORMAT),
        "version": np.array(MODEL_FORMAT_VERSION),
        "kernel_kind": np.array(model.config.kernel.kind),
        "kernel_sigma": np.array(
            np.nan if model.config.kernel.sigma is None else model.config.kernel.sigma),
        "C": np.array(model.config.C),
        "tol": np.array(np.nan if model.config.tol is None else model.config.tol),
        "max_iter": np.array(model.config.max_iter),
        "levels": model.levels.as_array(),
        "alpha_plus": model.dual.alpha_plus,
        "alpha_minus": model.dual.alpha_minus,
        "lam": model.dual.lam,
        "support_features": model.support_features,
        "converged": np.array(model.converged),
        "kkt": np.array(model.kkt),
        "n_sweeps": np.array(model.n_sweeps),
        "objective_history": np.asarray(model.objective_history, dtype=float),
        "has_scaler": np.array(model.scaler is not None),
    }
    if model.scaler is not None:
        payload["scaler_min"] = model.scaler.col_min
        payload["scaler_max"] = model.scaler.col_max
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_model(path) -> CsvqrModel:
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != MODEL_FORMAT:
            raise ValueError(f"{path}: not a csvqr model file")
        version = int(data["version"])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {version}")
        sigma = float(data["kernel_sigma"])
        tol = float(data["tol"])
        config = CsvqrConfig(
            C=float(data["C"]),
            kernel=KernelSpec(str(data["kernel_kind"]), None if np.isnan(sigma) else sigma),
            tol=None if np.isnan(tol) else tol,
            max_iter=int(data["max_iter"]),
        )
        scaler = None
        if bool(data["has_scaler"]):
            scaler = MinMaxScaler(data["scaler_min"].copy(), data["scaler_max"].copy())
        return CsvqrModel(
            support_features=data["support_features"].copy(),
            dual=DualSolution(data["alpha_plus"].copy(), data["alpha_minus"].copy(),
                              data["lam"].copy()),
            levels=QuantileLevels(tuple(float(t) for t in data["levels"])),
            config=config,
            scaler=scaler,
            converged=bool(data["converged"]),
            kkt=float(data["kkt"]),
            n_sweeps=int(data["n_sweeps"]),
            objective_history=tuple(float(v) for v in data["objective_history"]),
        )
