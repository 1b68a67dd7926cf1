"""Pairwise logistic likelihood, analytic gradients, and the optimizers.

The learning problem is shared by every metric kind: maximize

    L = sum_related log sigma(c - d) + sum_unrelated log(1 - sigma(c - d))

over the metric parameters and the threshold c, where d is the distance of
the pair under the current parameters. Internally the optimizer minimizes
f = -L (plus an optional quadratic penalty, off by default). Likelihood and
gradient sums run over fixed pair blocks through the deterministic reduction
in parallel.py, so results do not depend on the thread count.

Gradient derivation, used by all kinds. Write t = c - d and p = sigma(t):

    related pair:    dL/dc += (1 - p),   dL/dd = -(1 - p)
    unrelated pair:  dL/dc += -p,        dL/dd = +p

and the chain rule through each distance gives, with D = x_i - x_j:

    weighted_nn:   dd/dw = 2 w o D o D
    low_rank:      dd/dY = 2 D^T (D Y)
    personalized:  dd/dY = 2 D^T ((D Y) o w_u^2),  dd/dw_uk = 2 (D Y)_k^2 w_uk
"""

import time
from collections import deque
from dataclasses import dataclass, fields

import numpy as np

from .catalog import DataError, MetricModel
from .metric import model_distances, project_rows, sigmoid, softplus, _rowwise_sqnorm
from .parallel import map_reduce_blocks, resolve_threads
from .sampling import LabeledPairSet

_GRAD_NORM_FLOOR = 1e-8
_ARMIJO = 1e-4
_MIN_STEP = 1e-20
_CURVATURE_GUARD = 1e-10
_HISTORY = 10
_C0_SAMPLE = 1000


class TrainingError(Exception):
    """Optimization failed in a way retrying with the same inputs will not fix."""


@dataclass
class TrainConfig:
    """Knobs for train / train_personalized / fit_wnn.

    init_scale None means 1/sqrt(F); c0 None means the mean distance of the
    initial model over a sample of at most 1,000 training pairs, which puts
    the initial link probabilities near 0.5.
    """

    kind: str = "low_rank"
    rank: int = 10
    max_iterations: int = 200
    tolerance: float = 1e-6
    optimizer: str = "quasi_newton"
    initial_step: float = 1.0
    step_decay: float = 0.5
    seed: int = 0
    init_scale: float | None = None
    feature_norm: str = "none"
    c0: float | None = None
    threads: int | None = None
    deterministic: bool = True
    l2_penalty: float = 0.0

    def validate(self):
        if self.kind not in ("low_rank", "weighted_nn"):
            raise DataError(f"unknown metric kind: {self.kind!r}")
        if self.rank < 1:
            raise DataError(f"rank must be >= 1, got {self.rank}")
        if self.tolerance <= 0:
            raise DataError("tolerance must be positive")
        if self.optimizer not in ("quasi_newton", "gradient_ascent"):
            raise DataError(f"unknown optimizer: {self.optimizer!r}")
        if self.init_scale is not None and self.init_scale <= 0:
            raise DataError("init_scale must be positive")
        if self.feature_norm not in ("none", "l2_unit"):
            raise DataError(f"unknown feature normalization: {self.feature_norm!r}")
        if self.initial_step <= 0:
            raise DataError("initial_step must be positive")
        if not 0.0 < self.step_decay < 1.0:
            raise DataError("step_decay must lie in (0, 1)")
        if self.max_iterations < 0:
            raise DataError("max_iterations must be >= 0")
        if self.l2_penalty < 0:
            raise DataError("l2_penalty must be >= 0")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Read a plain ``key = value`` config file ('#' starts a comment)."""
        known = {f.name: f for f in fields(cls)}
        values = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in known:
                    raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _coerce_config_value(key, raw, path, lineno)
        config = cls(**values)
        config.validate()
        return config


def _coerce_config_value(key, raw, path, lineno):
    optional_float = {"init_scale", "c0"}
    int_keys = {"rank", "max_iterations", "seed", "threads"}
    float_keys = {"tolerance", "initial_step", "step_decay", "l2_penalty"}
    bool_keys = {"deterministic"}
    try:
        if key in optional_float:
            return None if raw.lower() in ("none", "null", "") else float(raw)
        if key == "threads" and raw.lower() in ("none", "null", ""):
            return None
        if key in int_keys:
            return int(raw)
        if key in float_keys:
            return float(raw)
        if key in bool_keys:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad value {raw!r} for {key!r}") from None
    return raw


@dataclass
class TrainReport:
    trace: list  # accepted log-likelihood per iteration; trace[0] is the init
    train_accuracy: float
    wall_time: float
    iterations: int
    termination: str  # tolerance | max_iterations | gradient_norm | no_ascent_step


def _pair_arrays(pairs, features=None):
    """Accept a LabeledPairSet or a plain (i, j, labels[, users]) tuple."""
    if isinstance(pairs, LabeledPairSet):
        if features is not None and pairs.item_ids != features.item_ids:
            raise DataError("pair set item table does not match the feature matrix")
        return pairs.arrays()
    i_idx = np.asarray(pairs[0], dtype=np.int64)
    j_idx = np.asarray(pairs[1], dtype=np.int64)
    labels = np.asarray(pairs[2], dtype=bool)
    users = np.asarray(pairs[3], dtype=np.int64) if len(pairs) > 3 else None
    if not (len(i_idx) == len(j_idx) == len(labels)):
        raise DataError("pair arrays must have equal length")
    if users is not None and len(users) != len(i_idx):
        raise DataError("user array length mismatch")
    return i_idx, j_idx, labels, users


class _Objective:
    """f = -L (+ l2 penalty on the transform) with its gradient.

    Parameters travel as one flat vector: transform, then c, then (for the
    personalized kind) the user weight table. Likelihood and gradient are
    reduced over fixed pair blocks so values are thread-count independent.
    """

    def __init__(self, kind, X, i_idx, j_idx, labels, users=None, n_users=0,
                 rank=None, l2_penalty=0.0, threads=1, deterministic=True):
        self.kind = kind
        self.X = X
        self.i = i_idx
        self.j = j_idx
        self.labels = labels
        self.users = users
        self.n_users = n_users
        self.F = X.shape[1]
        self.K = self.F if kind == "weighted_nn" else rank
        self.l2_penalty = l2_penalty
        self.threads = threads
        self.deterministic = deterministic
        if kind == "personalized":
            if users is None:
                raise DataError("personalized objective requires user indices")
            self.n_params = self.F * self.K + 1 + n_users * self.K
        elif kind == "low_rank":
            self.n_params = self.F * self.K + 1
        else:
            self.n_params = self.F + 1

    def pack(self, transform, c, user_w=None):
        parts = [np.asarray(transform, dtype=np.float64).ravel(), [float(c)]]
        if self.kind == "personalized":
            parts.append(np.asarray(user_w, dtype=np.float64).ravel())
        return np.concatenate(parts)

    def unpack(self, vec):
        if self.kind == "weighted_nn":
            return vec[: self.F], float(vec[self.F]), None
        t_end = self.F * self.K
        transform = vec[:t_end].reshape(self.F, self.K)
        c = float(vec[t_end])
        if self.kind != "personalized":
            return transform, c, None
        user_w = vec[t_end + 1:].reshape(self.n_users, self.K)
        return transform, c, user_w

    def project(self, vec):
        """Clamp user weights to be nonnegative; other parameters are free."""
        if self.kind != "personalized":
            return vec
        t_end = self.F * self.K + 1
        out = vec.copy()
        np.maximum(out[t_end:], 0.0, out=out[t_end:])
        return out

    def _penalty(self, transform):
        if self.l2_penalty == 0.0:
            return 0.0
        return self.l2_penalty * float(np.sum(transform * transform))

    def loglik(self, vec) -> float:
        """Plain log-likelihood at vec (no penalty term)."""
        transform, c, user_w = self.unpack(vec)
        if self.kind == "weighted_nn":
            w = transform

            def worker(lo, hi):
                delta = self.X[self.i[lo:hi]] - self.X[self.j[lo:hi]]
                return self._block_loglik(_rowwise_sqnorm(delta * w), c, lo, hi)
        else:
            S = project_rows(self.X, transform)

            def worker(lo, hi):
                v = S[self.i[lo:hi]] - S[self.j[lo:hi]]
                if self.kind == "personalized":
                    v = v * user_w[self.users[lo:hi]]
                return self._block_loglik(_rowwise_sqnorm(v), c, lo, hi)

        return map_reduce_blocks(len(self.i), worker, lambda a, b: a + b,
                                 self.threads, self.deterministic)

    def _block_loglik(self, d, c, lo, hi):
        t = c - d
        lab = self.labels[lo:hi]
        return -(float(np.sum(softplus(-t[lab]))) + float(np.sum(softplus(t[~lab]))))

    def value_and_grad(self, vec):
        """Returns (f, L, grad_f) at vec."""
        transform, c, user_w = self.unpack(vec)
        if self.kind == "weighted_nn":
            L, gc, gt = self._grad_weighted(transform, c)
            gw_extra = None
        elif self.kind == "low_rank":
            L, gc, gt = self._grad_lowrank(transform, c)
            gw_extra = None
        else:
            L, gc, gt, gw_extra = self._grad_personalized(transform, c, user_w)
        grad_parts = [-gt.ravel(), [-gc]]
        if gw_extra is not None:
            grad_parts.append(-gw_extra.ravel())
        grad = np.concatenate(grad_parts)
        f = -L + self._penalty(transform)
        if self.l2_penalty != 0.0:
            grad[: transform.size] += 2.0 * self.l2_penalty * transform.ravel()
        return f, L, grad

    def _coeffs(self, d, c, lo, hi):
        t = c - d
        lab = self.labels[lo:hi]
        L = -(float(np.sum(softplus(-t[lab]))) + float(np.sum(softplus(t[~lab]))))
        p = sigmoid(t)
        coeff = np.where(lab, -(1.0 - p), p)  # dL/dd per pair
        gc = float(np.sum(np.where(lab, 1.0 - p, -p)))
        return L, gc, coeff

    def _grad_weighted(self, w, c):
        def worker(lo, hi):
            delta = self.X[self.i[lo:hi]] - self.X[self.j[lo:hi]]
            d = _rowwise_sqnorm(delta * w)
            L, gc, coeff = self._coeffs(d, c, lo, hi)
            gw = 2.0 * w * (coeff @ (delta * delta))
            return L, gc, gw

        return map_reduce_blocks(len(self.i), worker, _add3,
                                 self.threads, self.deterministic)

    def _grad_lowrank(self, Y, c):
        S = project_rows(self.X, Y)

        def worker(lo, hi):
            i, j = self.i[lo:hi], self.j[lo:hi]
            P = S[i] - S[j]
            d = _rowwise_sqnorm(P)
            L, gc, coeff = self._coeffs(d, c, lo, hi)
            delta = self.X[i] - self.X[j]
            gY = delta.T @ ((2.0 * coeff)[:, None] * P)
            return L, gc, gY

        return map_reduce_blocks(len(self.i), worker, _add3,
                                 self.threads, self.deterministic)

    def _grad_personalized(self, Y, c, user_w):
        S = project_rows(self.X, Y)

        def worker(lo, hi):
            i, j = self.i[lo:hi], self.j[lo:hi]
            u = self.users[lo:hi]
            W = user_w[u]
            P = S[i] - S[j]
            d = _rowwise_sqnorm(P * W)
            L, gc, coeff = self._coeffs(d, c, lo, hi)
            delta = self.X[i] - self.X[j]
            gY = delta.T @ ((2.0 * coeff)[:, None] * (P * W * W))
            gW = np.zeros((self.n_users, self.K))
            np.add.at(gW, u, (2.0 * coeff)[:, None] * (P * P) * W)
            return L, gc, gY, gW

        def combine(a, b):
            return (a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3])

        return map_reduce_blocks(len(self.i), worker, combine,
                                 self.threads, self.deterministic)


def _add3(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _objective_for_model(model: MetricModel, features, pairs, threads, deterministic):
    X = features.normalized(model.feature_norm).values
    i_idx, j_idx, labels, users = _pair_arrays(pairs, features)
    kind = model.kind
    n_users = 0
    if kind == "personalized":
        if users is None:
            raise DataError("personalized model requires user-annotated pairs")
        if isinstance(pairs, LabeledPairSet) and pairs.user_ids is not None \
                and model.user_ids is not None and pairs.user_ids != model.user_ids:
            remap = np.array([model.user_index(u) for u in pairs.user_ids], dtype=np.int64)
            users = remap[users]
        n_users = len(model.user_ids)
    obj = _Objective(kind, X, i_idx, j_idx, labels, users, n_users,
                     rank=None if kind == "weighted_nn" else model.rank,
                     threads=resolve_threads(threads), deterministic=deterministic)
    vec = obj.pack(model.transform, model.threshold, model.user_weights)
    return obj, vec


def log_likelihood(model: MetricModel, features, pairs, threads=None,
                   deterministic=True) -> float:
    """Pairwise logistic log-likelihood of a labeled pair set under a model.

    pairs may be a LabeledPairSet or a plain (i_idx, j_idx, labels[, users])
    tuple of arrays. Always <= 0.
    """
    obj, vec = _objective_for_model(model, features, pairs, threads, deterministic)
    return obj.loglik(vec)


def gradient(model: MetricModel, features, pairs, threads=None, deterministic=True):
    """Analytic gradient of the log-likelihood at the model point.

    Returns (dL/dtransform, dL/dc) for global kinds and
    (dL/dtransform, dL/dc, dL/duser_weights) for personalized models.
    """
    obj, vec = _objective_for_model(model, features, pairs, threads, deterministic)
    _, _, grad_f = obj.value_and_grad(vec)
    gt, gc, gw = obj.unpack(-grad_f)
    if model.kind == "personalized":
        return gt.copy(), gc, gw.copy()
    return gt.copy(), gc


def _minimize(obj: _Objective, x0, config: TrainConfig, iteration_cb=None):
    """Backtracking quasi-Newton / gradient descent on f with a monotone trace.

    Accepted steps satisfy both the Armijo condition (measured against the
    projected step) and plain non-increase of f, so the reported likelihood
    trace is non-decreasing by construction.
    """
    x = obj.project(np.asarray(x0, dtype=np.float64))
    f, L, g = obj.value_and_grad(x)
    if not np.isfinite(f):
        raise TrainingError("non-finite likelihood at iteration 0 (bad init scale?)")
    trace = [L]
    if iteration_cb is not None:
        iteration_cb(0, L, x)
    history: deque = deque(maxlen=_HISTORY)
    termination = "max_iterations"
    it = 0
    while it < config.max_iterations:
        if float(np.linalg.norm(g)) < _GRAD_NORM_FLOOR:
            termination = "gradient_norm"
            break
        if config.optimizer == "quasi_newton":
            p = -_two_loop(g, history)
            if float(p @ g) >= 0.0:
                history.clear()
                p = -g
            alpha = 1.0
        else:
            p = -g
            alpha = config.initial_step
        accepted = False
        while alpha >= _MIN_STEP:
            xt = obj.project(x + alpha * p)
            ft = -obj.loglik(xt) + obj._penalty(obj.unpack(xt)[0])
            if not np.isfinite(ft):
                raise TrainingError(f"non-finite likelihood at iteration {it + 1}")
            gdx = float(g @ (xt - x))
            if ft <= f + _ARMIJO * gdx and ft <= f:
                accepted = True
                break
            alpha *= config.step_decay
        if not accepted:
            termination = "no_ascent_step"
            break
        f_prev = f
        f, L, g_new = obj.value_and_grad(xt)
        s = xt - x
        y = g_new - g
        sy = float(s @ y)
        if config.optimizer == "quasi_newton" and \
                sy > _CURVATURE_GUARD * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            history.append((s, y, 1.0 / sy))
        x, g = xt, g_new
        it += 1
        trace.append(L)
        if iteration_cb is not None:
            iteration_cb(it, L, x)
        if abs(f_prev - f) <= config.tolerance * max(1.0, abs(f_prev)):
            termination = "tolerance"
            break
    return x, trace, it, termination


def _two_loop(g, history):
    """L-BFGS two-loop recursion: approximate (inverse Hessian) @ g."""
    if not history:
        return g.copy()
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s_last, y_last, _ = history[-1]
    q *= float(s_last @ y_last) / float(y_last @ y_last)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _accuracy(d, c, labels) -> float:
    return float(np.mean((d < c) == labels))


def _init_params(config: TrainConfig, obj: _Objective, X, i_idx, j_idx):
    rng = np.random.default_rng(config.seed)
    scale = config.init_scale if config.init_scale is not None else 1.0 / np.sqrt(obj.F)
    if config.kind == "weighted_nn":
        transform = rng.normal(0.0, scale, size=obj.F)
    else:
        transform = rng.normal(0.0, scale, size=(obj.F, obj.K))
    if config.c0 is not None:
        c0 = config.c0
    else:
        m = len(i_idx)
        sel = rng.choice(m, size=min(_C0_SAMPLE, m), replace=False)
        if config.kind == "weighted_nn":
            d0 = _rowwise_sqnorm((X[i_idx[sel]] - X[j_idx[sel]]) * transform)
        else:
            S = project_rows(X, transform)
            d0 = _rowwise_sqnorm(S[i_idx[sel]] - S[j_idx[sel]])
        c0 = float(np.mean(d0))
    return transform, c0


def _check_train_input(pairs):
    if isinstance(pairs, LabeledPairSet) and pairs.partition != "train":
        raise DataError(
            f"training expects the train partition, got {pairs.partition!r}"
        )


def train(config: TrainConfig, features, pairs, warm_start: MetricModel | None = None,
          progress=None):
    """Fit a weighted_nn or low_rank metric by maximum likelihood.

    Returns (MetricModel, TrainReport). warm_start, when given, supplies the
    starting point instead of the seeded random initialization; it must match
    the configured kind and dimensions. progress, when given, receives one
    ``iter\\tlog_likelihood\\ttrain_acc`` line per accepted iteration.
    """
    config.validate()
    _check_train_input(pairs)
    start = time.perf_counter()
    norm_features = features.normalized(config.feature_norm)
    X = norm_features.values
    i_idx, j_idx, labels, _ = _pair_arrays(pairs, features)
    if len(i_idx) == 0:
        raise DataError("cannot train on an empty pair set")
    obj = _Objective(config.kind, X, i_idx, j_idx, labels,
                     rank=config.rank, l2_penalty=config.l2_penalty,
                     threads=resolve_threads(config.threads),
                     deterministic=config.deterministic)
    if warm_start is not None:
        if warm_start.kind != config.kind or warm_start.n_features != obj.F:
            raise DataError("warm start does not match the configured kind/dimensions")
        if config.kind == "low_rank" and warm_start.rank != config.rank:
            raise DataError("warm start rank does not match config")
        transform, c0 = warm_start.transform, warm_start.threshold
    else:
        transform, c0 = _init_params(config, obj, X, i_idx, j_idx)
    x0 = obj.pack(transform, c0)
    cb = _progress_callback(progress, obj, i_idx, j_idx, labels)
    x, trace, iterations, termination = _minimize(obj, x0, config, cb)
    final_t, final_c, _ = obj.unpack(x)
    model = MetricModel(config.kind, final_t.copy(), final_c,
                        metadata={"feature_norm": config.feature_norm,
                                  "rank": int(obj.K), "termination": termination})
    d = model_distances(model, X, i_idx, j_idx)
    report = TrainReport(trace, _accuracy(d, final_c, labels),
                         time.perf_counter() - start, iterations, termination)
    return model, report


def train_personalized(config: TrainConfig, features, pairs: LabeledPairSet,
                       warm_start: MetricModel, freeze_user_weights=False,
                       progress=None):
    """Fit (Y, c) and nonnegative per-user weights from a global warm start.

    pairs must be a user-annotated LabeledPairSet; the model's user table is
    taken from it. User weights start at all-ones (the point where the
    personalized distance equals the global one) and are clamped to >= 0
    after every optimizer step. freeze_user_weights pins them at one, which
    reduces the fit to the plain low_rank trajectory.
    """
    config.validate()
    _check_train_input(pairs)
    if not isinstance(pairs, LabeledPairSet) or pairs.user_ids is None:
        raise DataError("personalized training requires user-annotated pairs")
    if warm_start.kind != "low_rank":
        raise DataError("warm start must be a low_rank model")
    start = time.perf_counter()
    norm_features = features.normalized(config.feature_norm)
    X = norm_features.values
    i_idx, j_idx, labels, users = _pair_arrays(pairs, features)
    n_users = len(pairs.user_ids)
    if warm_start.n_features != X.shape[1]:
        raise DataError("warm start feature dimension mismatch")
    kind = "low_rank" if freeze_user_weights else "personalized"
    rank = warm_start.rank
    ones = np.ones((n_users, rank))
    if freeze_user_weights:
        # With unit weights the personalized distance is the global one, so
        # the frozen fit is exactly a low_rank fit from the warm start.
        obj = _Objective("low_rank", X, i_idx, j_idx, labels,
                         rank=rank, l2_penalty=config.l2_penalty,
                         threads=resolve_threads(config.threads),
                         deterministic=config.deterministic)
        x0 = obj.pack(warm_start.transform, warm_start.threshold)
    else:
        obj = _Objective("personalized", X, i_idx, j_idx, labels, users, n_users,
                         rank=rank, l2_penalty=config.l2_penalty,
                         threads=resolve_threads(config.threads),
                         deterministic=config.deterministic)
        x0 = obj.pack(warm_start.transform, warm_start.threshold, ones)
    cb = _progress_callback(progress, obj, i_idx, j_idx, labels)
    x, trace, iterations, termination = _minimize(obj, x0, config, cb)
    final_t, final_c, final_w = obj.unpack(x)
    if final_w is None:
        final_w = ones
    model = MetricModel("personalized", final_t.copy(), final_c,
                        list(pairs.user_ids), final_w.copy(),
                        metadata={"feature_norm": config.feature_norm,
                                  "rank": int(rank), "termination": termination})
    d = model_distances(model, X, i_idx, j_idx, users)
    report = TrainReport(trace, _accuracy(d, final_c, labels),
                         time.perf_counter() - start, iterations, termination)
    return model, report


def _progress_callback(progress, obj, i_idx, j_idx, labels):
    if progress is None:
        return None

    def cb(it, L, vec):
        transform, c, user_w = obj.unpack(vec)
        if obj.kind == "weighted_nn":
            d = _rowwise_sqnorm((obj.X[i_idx] - obj.X[j_idx]) * transform)
        else:
            S = project_rows(obj.X, transform)
            v = S[i_idx] - S[j_idx]
            if user_w is not None:
                v = v * user_w[obj.users]
            d = _rowwise_sqnorm(v)
        progress.write(f"{it}\t{L:.6f}\t{_accuracy(d, c, labels):.4f}\n")

    return cb
