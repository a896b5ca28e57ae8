"""L1-penalized linear regression and the leave-one-season-out protocol.

The objective minimized everywhere is::

    (1 / 2n) * ||y - X w - b||^2 + lam * ||w||_1

with an unpenalized intercept ``b``. Data are centered before solving so
``b`` follows in closed form. Two solvers are available:

``coordinate_descent``
    cyclic exact coordinate minimization with covariance updates; the
    deterministic reference.
``proximal_sgd``
    proximal stochastic gradient with variance reduction (one full
    gradient snapshot per epoch, then one shuffled pass of single-row
    steps).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .featureset import PageviewScaler, is_week_column

logger = logging.getLogger(__name__)

OPTIMIZERS = ("coordinate_descent", "proximal_sgd")


class DivergenceError(FloatingPointError):
    pass


class ObjectiveIncreaseError(RuntimeError):
    pass


def soft_threshold(z, t):
    """``sign(z) * max(|z| - t, 0)``; elementwise for arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be non-negative")
    if np.ndim(z) == 0 and np.ndim(t) == 0:
        z, t = float(z), float(t)
        if z > t:
            return z - t
        if z < -t:
            return z + t
        return 0.0
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_objective(X, y, coef, intercept, lam) -> float:
    r = np.asarray(y, dtype=float) - np.asarray(X, dtype=float) @ coef - intercept
    return float(r @ r / (2 * len(r)) + lam * np.abs(coef).sum())


def lambda_max(X, y) -> float:
    """Smallest penalty at which every weight is zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Xc = X - X.mean(axis=0)
    return float(np.max(np.abs(Xc.T @ (y - y.mean()))) / len(y)) if X.shape[1] else 0.0


def lambda_grid(X, y, n_lambdas: int = 50, ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced penalties from ``lambda_max`` down to ``ratio * lambda_max``."""
    top = lambda_max(X, y)
    if top == 0.0:
        return np.array([1.0])
    return np.geomspace(top, top * ratio, n_lambdas)


@dataclass
class LassoConfig:
    lambda_grid: list[float] | None = None
    n_lambdas: int = 50
    lambda_ratio: float = 1e-4
    optimizer: str = "coordinate_descent"
    max_epochs: int = 10000
    step_size: float | None = None
    tolerance: float = 1e-5
    seed: int = 0
    fallback_lambda_ratio: float = 1e-2

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.lambda_grid is not None:
            g = [float(v) for v in self.lambda_grid]
            if not g:
                raise ValueError("lambda_grid is empty")
            if any(v <= 0 for v in g):
                raise ValueError("lambda_grid values must be positive")
            if g != sorted(g) and g != sorted(g, reverse=True):
                raise ValueError("lambda_grid must be sorted")
            self.lambda_grid = g

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@njit(cache=True)
def _cd_kernel(Xc, yc, G, c, lam, w, tol_scale, max_epochs, trace):
    """Cyclic coordinate descent with active-set sweeps.

    Alternates one full sweep with sweeps over the nonzero weights until
    those settle, then confirms with another full sweep. The exact
    objective is recorded after every sweep. Returns
    (sweeps, recorded objectives, status): status 0 converged, 1 sweep budget
    exhausted, 2 objective rose, 3 objective non-finite.
    """
    n, p = Xc.shape
    diag = np.empty(p)
    for j in range(p):
        diag[j] = G[j, j]
        if diag[j] <= 0.0:
            w[j] = 0.0
    q = G @ w
    r = yc - Xc @ w
    prev = 0.5 * (r @ r) / n + lam * np.abs(w).sum()
    full = True
    epochs = 0
    n_full = 0
    while epochs < max_epochs:
        if full:
            q = G @ w
        biggest = 0.0
        for j in range(p):
            if diag[j] <= 0.0 or (not full and w[j] == 0.0):
                continue
            old = w[j]
            rho = c[j] - q[j] + diag[j] * old
            if rho > lam:
                new = (rho - lam) / diag[j]
            elif rho < -lam:
                new = (rho + lam) / diag[j]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                w[j] = new
                for k in range(p):
                    q[k] += G[k, j] * delta
                step = abs(delta) * np.sqrt(diag[j])
                if step > biggest:
                    biggest = step
        epochs += 1
        r = yc - Xc @ w
        cur = 0.5 * (r @ r) / n + lam * np.abs(w).sum()
        trace[n_full] = cur
        n_full += 1
        if not np.isfinite(cur):
            return epochs, n_full, 3
        if cur > prev + 1e-12 * max(1.0, abs(prev)):
            return epochs, n_full, 2
        prev = cur
        if full:
            if biggest <= tol_scale:
                return epochs, n_full, 0
            full = False
        elif biggest <= tol_scale:
            full = True
    return epochs, n_full, 1


def _coordinate_descent(Xc, yc, G, c, lam, w, tol, max_epochs):
    """Minimize the centered objective in place on ``w``.

    ``G = Xc'Xc / n`` and ``c = Xc'yc / n``. Returns (objective after
    each sweep, total sweeps, converged). Converged means no weight
    moved the fitted values by more than ``tol`` times the RMS of ``yc``
    during a full sweep.
    """
    n = len(yc)
    if w.size == 0:
        return [], 0, True
    tol_scale = tol * max(math.sqrt(float(yc @ yc) / n), 1e-300)
    trace = np.empty(max_epochs)
    epochs, n_full, status = _cd_kernel(
        np.ascontiguousarray(Xc), yc, np.ascontiguousarray(G), c, lam, w, tol_scale, max_epochs, trace
    )
    trace = trace[:n_full].tolist()
    if status == 3:
        raise DivergenceError("objective became non-finite during coordinate descent")
    if status == 2:
        raise ObjectiveIncreaseError(
            f"objective rose to {trace[-1]!r} in sweep {n_full}"
        )
    return trace, epochs, status == 0


def _proximal_svrg(Xc, yc, lam, w, step, tol, max_epochs, rng):
    n = Xc.shape[0]
    trace: list[float] = []

    def objective(v) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            r = yc - Xc @ v
            return float(r @ r / (2 * n) + lam * np.abs(v).sum())

    prev = objective(w)
    converged = False
    epochs = 0
    while epochs < max_epochs:
        snap = w.copy()
        mu = -Xc.T @ (yc - Xc @ snap) / n
        for i in rng.permutation(n):
            xi = Xc[i]
            v = xi * (xi @ (w - snap)) + mu
            w[:] = soft_threshold(w - step * v, step * lam)
        epochs += 1
        cur = objective(w)
        if not math.isfinite(cur):
            raise DivergenceError(
                f"objective diverged at epoch {epochs}; reduce step_size (currently {step:.3g})"
            )
        trace.append(cur)
        if abs(prev - cur) <= tol * max(1.0, abs(cur)) and np.max(np.abs(w - snap), initial=0.0) <= math.sqrt(tol):
            converged = True
            break
        prev = cur
    return trace, epochs, converged


class LassoRegression(RegressorMixin, BaseEstimator):
    """Linear regression with an L1 penalty on the weights.

    Parameters
    ----------
    alpha : float, default=1.0
        Penalty strength ``lam``.
    optimizer : {"coordinate_descent", "proximal_sgd"}
    max_epochs : int, default=10000
        Full sweeps (coordinate descent) or passes over the rows (SGD).
    step_size : float or None
        SGD step; defaults to ``1 / (4 * max_i ||x_i||^2)`` on centered rows.
    tol : float, default=1e-5
    random_state : int, default=0
        Seed for the SGD row shuffle.

    Attributes
    ----------
    coef_, intercept_, n_iter_, converged_, objective_, objective_trace_
    """

    def __init__(
        self,
        alpha: float = 1.0,
        optimizer: str = "coordinate_descent",
        max_epochs: int = 10000,
        step_size: float | None = None,
        tol: float = 1e-5,
        random_state: int = 0,
    ):
        self.alpha = alpha
        self.optimizer = optimizer
        self.max_epochs = max_epochs
        self.step_size = step_size
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y, coef_init=None):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 rows")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        n, p = X.shape
        x_mean = X.mean(axis=0)
        y_mean = float(y.mean())
        Xc = X - x_mean
        yc = y - y_mean
        w = np.zeros(p) if coef_init is None else np.array(coef_init, dtype=float)

        if self.optimizer == "coordinate_descent":
            G = Xc.T @ Xc / n
            c = Xc.T @ yc / n
            trace, epochs, converged = _coordinate_descent(
                Xc, yc, G, c, float(self.alpha), w, self.tol, self.max_epochs
            )
        else:
            step = self.step_size
            if step is None:
                lmax = float(np.max(np.einsum("ij,ij->i", Xc, Xc)))
                step = 1.0 / (4.0 * lmax) if lmax > 0 else 1.0
            rng = np.random.default_rng(self.random_state)
            trace, epochs, converged = _proximal_svrg(
                Xc, yc, float(self.alpha), w, step, self.tol, self.max_epochs, rng
            )
        if not converged:
            warnings.warn(
                f"{self.optimizer} stopped after {epochs} epochs without meeting tol={self.tol:g}",
                ConvergenceWarning,
                stacklevel=2,
            )
        self.coef_ = w
        self.intercept_ = y_mean - float(x_mean @ w)
        self.n_iter_ = epochs
        self.converged_ = converged
        self.objective_trace_ = trace
        self.objective_ = lasso_objective(X, y, w, self.intercept_, self.alpha)
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.coef_.shape[0]:
            raise ValueError(f"expected {self.coef_.shape[0]} columns, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_


def _path_mse(X_tr, y_tr, X_va, y_va, lambdas, est_params):
    """Validation MSE for each penalty, warm-starting down the path."""
    order = np.argsort(-lambdas)
    out = np.empty(len(lambdas))
    coef = None
    for k in order:
        est = LassoRegression(alpha=lambdas[k], **est_params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            est.fit(X_tr, y_tr, coef_init=coef)
        coef = est.coef_.copy()
        resid = y_va - est.predict(X_va)
        out[k] = float(resid @ resid / len(resid))
    return out


class SeasonCVLasso(RegressorMixin, BaseEstimator):
    """L1 regression whose penalty is picked by leave-one-season-out CV.

    ``fit(X, y, groups)`` scores every penalty by mean validation MSE over
    folds that each hold out one season of ``groups``; ties go to the
    larger penalty. The model is then refitted on all rows. With a single
    season no folds exist, and ``fallback_ratio * lambda_max`` is used.
    """

    def __init__(
        self,
        lambdas=None,
        n_lambdas: int = 50,
        lambda_ratio: float = 1e-4,
        optimizer: str = "coordinate_descent",
        max_epochs: int = 10000,
        step_size: float | None = None,
        tol: float = 1e-5,
        random_state: int = 0,
        fallback_ratio: float = 1e-2,
    ):
        self.lambdas = lambdas
        self.n_lambdas = n_lambdas
        self.lambda_ratio = lambda_ratio
        self.optimizer = optimizer
        self.max_epochs = max_epochs
        self.step_size = step_size
        self.tol = tol
        self.random_state = random_state
        self.fallback_ratio = fallback_ratio

    @classmethod
    def from_config(cls, cfg: LassoConfig) -> "SeasonCVLasso":
        return cls(
            lambdas=cfg.lambda_grid,
            n_lambdas=cfg.n_lambdas,
            lambda_ratio=cfg.lambda_ratio,
            optimizer=cfg.optimizer,
            max_epochs=cfg.max_epochs,
            step_size=cfg.step_size,
            tol=cfg.tolerance,
            random_state=cfg.seed,
            fallback_ratio=cfg.fallback_lambda_ratio,
        )

    def _est_params(self):
        return dict(
            optimizer=self.optimizer,
            max_epochs=self.max_epochs,
            step_size=self.step_size,
            tol=self.tol,
            random_state=self.random_state,
        )

    def fit(self, X, y, groups):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        groups = np.asarray(groups)
        if groups.shape[0] != X.shape[0]:
            raise ValueError("groups must have one label per row")
        if self.lambdas is None:
            lambdas = lambda_grid(X, y, self.n_lambdas, self.lambda_ratio)
        else:
            lambdas = np.sort(np.asarray(self.lambdas, dtype=float))[::-1]
        labels = list(dict.fromkeys(groups.tolist()))
        self.lambdas_ = lambdas
        self.fallback_used_ = len(labels) < 2
        if self.fallback_used_:
            warnings.warn(
                "only one training season; CV impossible, using the fallback penalty",
                UserWarning,
                stacklevel=2,
            )
            self.cv_mse_ = np.full((len(lambdas), 0), np.nan)
            self.mse_mean_ = np.full(len(lambdas), np.nan)
            self.alpha_ = self.fallback_ratio * lambda_max(X, y) if lambda_max(X, y) > 0 else float(lambdas[-1])
        else:
            folds = []
            for lab in labels:
                va = groups == lab
                folds.append(_path_mse(X[~va], y[~va], X[va], y[va], lambdas, self._est_params()))
            self.cv_mse_ = np.column_stack(folds)
            self.mse_mean_ = self.cv_mse_.mean(axis=1)
            best = float(self.mse_mean_.min())
            ties = np.flatnonzero(self.mse_mean_ <= best + 1e-12 * abs(best))
            self.alpha_ = float(lambdas[ties].max())
        final = LassoRegression(alpha=self.alpha_, **self._est_params()).fit(X, y)
        self.estimator_ = final
        self.coef_ = final.coef_
        self.intercept_ = final.intercept_
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict(X)


@dataclass
class TrainedModel:
    """A fitted model in persistable form.

    ``scaler`` holds ``{column: {"mean", "std"}}`` for the standardized
    leading columns; :func:`predict` applies it to raw inputs.
    """

    columns: list[str]
    weights: list[float]
    intercept: float
    lam: float
    training_rows: list[tuple[int, int]]
    optimizer: str
    epochs: int
    final_objective: float
    converged: bool
    seed: int
    season: str | None = None
    scaler: dict[str, dict[str, float]] | None = None
    config_hash: str | None = None
    cv_lambdas: list[float] = field(default_factory=list)
    cv_mse: list[float] = field(default_factory=list)

    @property
    def nonzero_count(self) -> int:
        return sum(1 for w in self.weights if w != 0.0)

    def nonzero_features(self, include_week_bits: bool = False) -> list[str]:
        return [
            c for c, w in zip(self.columns, self.weights)
            if w != 0.0 and (include_week_bits or not is_week_column(c))
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["training_rows"] = [list(r) for r in self.training_rows]
        d["nonzero_count"] = self.nonzero_count
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        d = dict(d)
        d.pop("nonzero_count", None)
        d["training_rows"] = [tuple(r) for r in d["training_rows"]]
        return cls(**d)


@dataclass
class Prediction:
    raw: np.ndarray
    clamped: np.ndarray


def predict(model: TrainedModel, X) -> Prediction:
    """Linear prediction per row; negatives are clamped to 0 in ``clamped``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.weights):
        raise ValueError(f"model has {len(model.weights)} columns, input has {X.shape[1]}")
    if model.scaler:
        sc = PageviewScaler.from_dict(model.scaler, X.shape[1])
        X = sc.transform(X)
    raw = X @ np.asarray(model.weights) + model.intercept
    return Prediction(raw=raw, clamped=np.maximum(raw, 0.0))


class AuditedTargets:
    """Target vector that only yields values through :meth:`take`.

    Every read is logged as a set of row indices; bulk conversion to an
    array is refused, so the log is the complete access history.
    """

    def __init__(self, values):
        self._values = np.asarray(values, dtype=float)
        self.reads: list[frozenset[int]] = []

    def __len__(self) -> int:
        return len(self._values)

    def take(self, indices):
        idx = np.asarray(indices, dtype=int)
        self.reads.append(frozenset(idx.tolist()))
        return self._values.take(idx)

    def __array__(self, *args, **kwargs):
        raise TypeError("AuditedTargets must be read through take()")

    def __getitem__(self, item):
        raise TypeError("AuditedTargets must be read through take()")


@dataclass
class SeasonFit:
    season: str
    test_rows: np.ndarray
    model: TrainedModel
    prediction: Prediction


@dataclass
class LosoResult:
    fits: list[SeasonFit]
    config: LassoConfig
    standardization: str

    def models(self) -> list[TrainedModel]:
        return [f.model for f in self.fits]


def loso_protocol(
    X,
    y,
    groups,
    cfg: LassoConfig | None = None,
    *,
    columns: Sequence[str] | None = None,
    rows: Sequence[tuple[int, int]] | None = None,
    held_out: Sequence[str] | None = None,
    n_page_columns: int | None = None,
    standardization: str = "train",
    config_hash: str | None = None,
) -> LosoResult:
    """Train one model per held-out season on all other seasons.

    ``y`` is only read through ``y.take(train_rows)``, once per season, so
    a held-out season's targets never reach its own training run. With
    ``standardization="train"`` the first ``n_page_columns`` columns are
    standardized using training rows only; ``"global"`` fits the scaler on
    every row (features only); ``"none"`` leaves ``X`` untouched.
    """
    cfg = cfg or LassoConfig()
    X = check_array(X, dtype=float)
    groups = np.asarray(groups)
    if len(groups) != X.shape[0] or len(y) != X.shape[0]:
        raise ValueError("X, y and groups must have the same number of rows")
    labels = list(dict.fromkeys(groups.tolist()))
    if len(labels) < 2:
        raise ValueError("leave-one-season-out needs at least 2 seasons")
    targets = held_out if held_out is not None else labels
    unknown = [s for s in targets if s not in labels]
    if unknown:
        raise ValueError(f"held-out seasons not in data: {unknown}")
    if standardization not in ("train", "global", "none"):
        raise ValueError(f"unknown standardization {standardization!r}")
    columns = list(columns) if columns is not None else [f"x{j}" for j in range(X.shape[1])]
    rows = list(rows) if rows is not None else [(0, i) for i in range(X.shape[0])]
    take = y.take if hasattr(y, "take") else np.asarray(y, dtype=float).take

    global_scaler = None
    if standardization == "global":
        global_scaler = PageviewScaler(n_page_columns=n_page_columns).fit(X)

    fits = []
    for season in targets:
        test = np.flatnonzero(groups == season)
        train = np.flatnonzero(groups != season)
        y_train = np.asarray(take(train), dtype=float)
        scaler = global_scaler
        if standardization == "train":
            scaler = PageviewScaler(n_page_columns=n_page_columns).fit(X[train])
        X_all = scaler.transform(X) if scaler is not None else X
        est = SeasonCVLasso.from_config(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            est.fit(X_all[train], y_train, groups[train])
        fin = est.estimator_
        page_cols = columns[: scaler.mean_.shape[0]] if scaler is not None else []
        model = TrainedModel(
            columns=columns,
            weights=[float(v) for v in fin.coef_],
            intercept=float(fin.intercept_),
            lam=float(est.alpha_),
            training_rows=[rows[i] for i in train],
            optimizer=cfg.optimizer,
            epochs=int(fin.n_iter_),
            final_objective=float(fin.objective_),
            converged=bool(fin.converged_),
            seed=cfg.seed,
            season=str(season),
            scaler=scaler.to_dict(page_cols) if scaler is not None else None,
            config_hash=config_hash,
            cv_lambdas=[float(v) for v in est.lambdas_],
            cv_mse=[float(v) for v in est.mse_mean_],
        )
        pred = predict(model, X[test])
        fits.append(SeasonFit(str(season), test, model, pred))
        logger.info("season %s: lambda=%.4g, %d nonzero weights", season, model.lam, model.nonzero_count)
    return LosoResult(fits, cfg, standardization)


def save_models(models: Sequence[TrainedModel], path: str | Path, meta: dict | None = None) -> None:
    doc = {"meta": dict(meta or {}), "models": [m.to_dict() for m in models]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=True)
        fh.write("\n")


def load_models(path: str | Path) -> list[TrainedModel]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [TrainedModel.from_dict(d) for d in doc["models"]]
