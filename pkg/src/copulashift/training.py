"""End-to-end training: the shift-regularized objective, baselines,
evaluation metrics, hyperparameter grid search, and shift diagnostics.

Each epoch walks even-sized shuffled source batches paired with
equally-sized target batches, builds the full loss graph (supervised term
plus marginal and dependence regularizers according to the method), and
takes an Adam step. Every run is a pure function of its TrainConfig.

Methods: ``mlp`` (no adaptation), ``dan`` (lambda * MMD on the joint
features), ``coral`` (lambda * covariance alignment), ``cdan``
(per-dimension marginal divergence plus the copula distance).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from . import autodiff as ad
from . import divergences as dv
from . import copula as cop
from .datasets import Dataset, batch_iterator, MinMaxStats
from .errors import ContractViolation
from .models import (LayerSpec, ModelParams, init_params, extract_features,
                     cross_entropy_loss, mse_loss, predict_proba,
                     predict_regression)

_METHODS = ("mlp", "dan", "coral", "cdan")

_MOONS_SPEC = LayerSpec(hidden=(8, 4), task="classification", n_classes=2)

_H1_TAGS = {"mmd": dv.DivergenceKind.mmd,
            "w1": dv.DivergenceKind.wasserstein1,
            "kl": dv.DivergenceKind.kl_histogram}
_H2_TAGS = {"kl": cop.DependenceKind.kl,
            "chi2": cop.DependenceKind.chi2,
            "w2": cop.DependenceKind.wasserstein2,
            "mmd": cop.DependenceKind.mmd_unit}


def _h1_from(value) -> dv.DivergenceKind:
    if isinstance(value, dv.DivergenceKind):
        return value
    if isinstance(value, str):
        if value not in _H1_TAGS:
            raise ContractViolation(f"h1 must be one of {sorted(_H1_TAGS)}, got {value!r}")
        return _H1_TAGS[value]()
    bw = value.get("bandwidths")
    return dv.DivergenceKind(kind=value["kind"],
                             bandwidths=None if bw is None else tuple(bw),
                             bins=value.get("bins", 32))


def _h2_from(value) -> cop.DependenceKind:
    if isinstance(value, cop.DependenceKind):
        return value
    if isinstance(value, str):
        if value not in _H2_TAGS:
            raise ContractViolation(f"h2 must be one of {sorted(_H2_TAGS)}, got {value!r}")
        return _H2_TAGS[value]()
    return cop.DependenceKind(tag=value["tag"], alpha=value.get("alpha"),
                              mc_samples=value.get("mc_samples", 1_000_000))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run; defaults are the two-moons setup.

    ``batch_size`` at or above the sample count gives one full-batch step
    per epoch. Small regularizer weights keep the supervised signal in
    charge early on: large weights can collapse the features before the
    classifier forms.
    """

    method: str = "cdan"
    alpha: float = 0.02
    beta: float = 0.05
    lambda_: float = 1.0
    learning_rate: float = 0.01
    max_epochs: int = 100
    early_stop_patience: int = 20
    batch_size: int = 1024
    seed: int = 0
    h1: dv.DivergenceKind = field(default_factory=dv.DivergenceKind.wasserstein1)
    h2: cop.DependenceKind = field(default_factory=cop.DependenceKind.kl)
    tanh_a: float = 100.0
    model: LayerSpec = _MOONS_SPEC
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ContractViolation(f"TrainConfig: method must be one of {_METHODS}")
        for name in ("alpha", "beta", "lambda_"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"TrainConfig: {name} must be >= 0")
        if self.learning_rate <= 0:
            raise ContractViolation("TrainConfig: learning_rate must be positive")
        if int(self.max_epochs) < 1:
            raise ContractViolation("TrainConfig: max_epochs must be >= 1")
        if int(self.early_stop_patience) < 0:
            raise ContractViolation("TrainConfig: early_stop_patience must be >= 0")
        if self.tanh_a <= 0:
            raise ContractViolation("TrainConfig: tanh_a must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ContractViolation("TrainConfig: holdout_fraction must be in [0, 1)")
        if self.method == "cdan" and self.model.feature_dim < 2:
            raise ContractViolation(
                "TrainConfig: the copula distance needs a feature dimension >= 2")

    def to_dict(self) -> dict:
        """Plain-JSON form: nested kinds become dicts, tuples become lists."""
        d = asdict(self)
        bw = self.h1.bandwidths
        d["h1"] = {"kind": self.h1.kind,
                   "bandwidths": None if bw is None else list(bw),
                   "bins": self.h1.bins}
        d["h2"] = {"tag": self.h2.tag, "alpha": self.h2.alpha,
                   "mc_samples": self.h2.mc_samples}
        d["model"] = {"hidden": list(self.model.hidden), "task": self.model.task,
                      "n_classes": self.model.n_classes,
                      "activation": self.model.activation}
        return d

    @classmethod
    def from_dict(cls, data: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        """Rebuild a config from to_dict output, layered over ``base``.

        Missing keys keep the base (or default) value. ``h1``/``h2`` accept
        the serialized dicts, plain tag strings ("w1", "chi2", ...), or
        kind instances; ``model`` accepts a dict or a LayerSpec.
        """
        src = base if base is not None else cls()
        kwargs = {f.name: getattr(src, f.name) for f in dataclasses.fields(cls)}
        simple = set(kwargs) - {"h1", "h2", "model"}
        unknown = set(data) - set(kwargs)
        if unknown:
            raise ContractViolation(
                f"TrainConfig.from_dict: unknown fields {sorted(unknown)}")
        for name in simple & set(data):
            kwargs[name] = data[name]
        if "h1" in data:
            kwargs["h1"] = _h1_from(data["h1"])
        if "h2" in data:
            kwargs["h2"] = _h2_from(data["h2"])
        if "model" in data:
            m = data["model"]
            kwargs["model"] = m if isinstance(m, LayerSpec) else LayerSpec(
                hidden=tuple(m["hidden"]), task=m.get("task", "classification"),
                n_classes=m.get("n_classes", 2),
                activation=m.get("activation", "relu"))
        return cls(**kwargs)


@dataclass
class TraceEntry:
    epoch: int
    loss: float
    md: float
    cd: float
    val: float | None

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "md": self.md,
                "cd": self.cd, "val": self.val}


class Adam:
    """First/second-moment adaptive gradient updates, applied in place."""

    def __init__(self, arrays, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            a -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _node_view(params: ModelParams):
    """A ModelParams whose arrays are fresh leaf nodes, plus the node list."""
    ext, nodes = [], []
    for w, b in params.extractor:
        wn, bn = ad.leaf(w), ad.leaf(b)
        ext.append((wn, bn))
        nodes.extend([wn, bn])
    hw, hb = ad.leaf(params.head[0]), ad.leaf(params.head[1])
    nodes.extend([hw, hb])
    view = ModelParams(params.spec, params.input_dim, ext, (hw, hb))
    return view, nodes


def _supervised_loss(features, labels, params_view) -> ad.Node:
    if params_view.spec.task == "classification":
        return cross_entropy_loss(features, labels, params_view)
    return mse_loss(features, labels, params_view)


def _joint_mmd_graph(fs: ad.Node, ft: ad.Node, bandwidths=None) -> ad.Node:
    """Squared-MMD V-statistic with a Gaussian kernel on the joint features."""
    n, m_t = fs.shape[0], ft.shape[0]

    def sqdist(a, b):
        acc = None
        for c in range(a.shape[1]):
            d = ad.pairwise_diff(ad.take_cols(a, [c]), ad.take_cols(b, [c]))
            acc = d * d if acc is None else acc + d * d
        return acc

    d_ss, d_tt, d_st = sqdist(fs, fs), sqdist(ft, ft), sqdist(fs, ft)
    if bandwidths is None:
        pooled = np.concatenate([d_ss.value[np.triu_indices(n, 1)],
                                 d_tt.value[np.triu_indices(m_t, 1)],
                                 d_st.value.ravel()])
        base = float(np.median(pooled)) or float(np.mean(pooled)) or 1.0
        bandwidths = (base, 2.0 * base)
    acc = None
    for b in bandwidths:
        term = (ad.total(ad.exp(d_ss * (-1.0 / b))) * (1.0 / (n * n))
                + ad.total(ad.exp(d_tt * (-1.0 / b))) * (1.0 / (m_t * m_t))
                + ad.total(ad.exp(d_st * (-1.0 / b))) * (-2.0 / (n * m_t)))
        acc = term if acc is None else acc + term
    return ad.clamp(acc, lo=0.0)


def _marginal_term(fs: ad.Node, ft: ad.Node, kind: dv.DivergenceKind) -> ad.Node:
    """Sum over feature dimensions of H1 between source and target columns.

    MMD enters as the distance (square root of the V-statistic, matching
    the gradient the paper derives); W1 as the sorted-sample mean absolute
    difference (equal batch sizes by construction); histogram KL is
    piecewise constant in the features, so it contributes its value with
    zero gradient.
    """
    total = None
    for c in range(fs.shape[1]):
        cs, ct = ad.take_cols(fs, [c]), ad.take_cols(ft, [c])
        if kind.kind == "mmd":
            term = ad.sqrt(dv.mmd_squared_graph(cs, ct, kind.bandwidths))
        elif kind.kind == "w1":
            order_s = np.argsort(cs.value.ravel(), kind="stable")
            order_t = np.argsort(ct.value.ravel(), kind="stable")
            term = ad.mean(ad.absolute(
                ad.take_rows(cs, order_s) - ad.take_rows(ct, order_t)))
        else:  # histogram KL: constant w.r.t. the features
            term = ad.constant(dv.kl_histogram_1d(
                cs.value.ravel(), ct.value.ravel(), kind.bins))
        total = term if total is None else total + term
    return total


def _batch_loss(params, xs, ys, xt, config: TrainConfig):
    """Build the full loss graph for one batch; returns scalars for the trace."""
    view, nodes = _node_view(params)
    f_s = extract_features(ad.constant(xs), view)
    sup = _supervised_loss(f_s, ys, view)
    md = cd = None
    if config.method == "dan" and config.lambda_ > 0:
        f_t = extract_features(ad.constant(xt), view)
        md = ad.sqrt(_joint_mmd_graph(f_s, f_t, config.h1.bandwidths)) * config.lambda_
    elif config.method == "coral" and config.lambda_ > 0:
        f_t = extract_features(ad.constant(xt), view)
        md = dv.coral_penalty_graph(f_s, f_t) * config.lambda_
    elif config.method == "cdan":
        f_t = None
        if config.alpha > 0 or config.beta > 0:
            f_t = extract_features(ad.constant(xt), view)
        if config.alpha > 0:
            md = _marginal_term(f_s, f_t, config.h1) * config.alpha
        if config.beta > 0:
            weights = cop.PairWeights.uniform(params.feature_dim, config.beta)
            cd = cop.copula_distance_graph(f_s, f_t, weights, config.h2, config.tanh_a)
    loss = sup
    if md is not None:
        loss = loss + md
    if cd is not None:
        loss = loss + cd
    return loss, nodes, (0.0 if md is None else md.item(),
                         0.0 if cd is None else cd.item())


def _holdout_split(n: int, fraction: float, seed: int):
    if fraction <= 0.0 or n < 10:
        return np.arange(n), np.empty(0, dtype=np.intp)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED])
    perm = rng.permutation(n)
    k = max(1, int(round(fraction * n)))
    return np.sort(perm[k:]), np.sort(perm[:k])


def _validation_loss(params, ds: Dataset, idx) -> float | None:
    if idx.size == 0:
        return None
    view, _ = _node_view(params)
    feats = extract_features(ad.constant(ds.features[idx]), view)
    return _supervised_loss(feats, ds.labels[idx], view).item()


def train(source: Dataset, target: Dataset, config: TrainConfig):
    """Run the shift-regularized training loop.

    Returns (ModelParams, trace) where the trace holds one entry per epoch
    with the batch-averaged loss, its marginal and dependence components,
    and the source-holdout supervised loss used for early stopping. The
    whole run is determined by config.seed.
    """
    if source.labels is None:
        raise ContractViolation("train: source dataset must be labeled")
    if source.dim != target.dim:
        raise ContractViolation(
            f"train: source d={source.dim} vs target d={target.dim}")
    if config.model.task == "classification" \
            and not np.issubdtype(source.labels.dtype, np.integer):
        raise ContractViolation("train: classification needs integer labels")

    params = init_params(config.model, source.dim, config.seed)
    optimizer = Adam(params.flat_arrays(), config.learning_rate)
    train_idx, val_idx = _holdout_split(len(source), config.holdout_fraction,
                                        config.seed)
    train_ds = source.subset(train_idx)
    n_t = len(target)
    trace: list[TraceEntry] = []
    best_val = math.inf
    best_params = None
    patience_left = config.early_stop_patience

    for epoch in range(1, config.max_epochs + 1):
        batches = list(batch_iterator(train_ds, config.batch_size,
                                      config.seed, epoch))
        if not batches:
            raise ContractViolation(
                f"train: {len(train_ds)} training rows after the holdout split "
                "yield no usable batch; provide at least 2 rows")
        t_rng = np.random.default_rng([int(config.seed) & 0xFFFFFFFF, 7919, epoch])
        need = sum(len(b) for b in batches)
        t_perm = np.concatenate([t_rng.permutation(n_t)
                                 for _ in range(-(-need // n_t))])
        loss_sum = md_sum = cd_sum = 0.0
        cursor = 0
        for k, idx in enumerate(batches):
            t_idx = t_perm[cursor:cursor + len(idx)]
            cursor += len(idx)
            loss, nodes, (md_v, cd_v) = _batch_loss(
                params, train_ds.features[idx], train_ds.labels[idx],
                target.features[t_idx], config)
            if not np.isfinite(loss.value[0, 0]):
                raise FloatingPointError(
                    f"train: non-finite loss at epoch {epoch}, batch {k}")
            ad.backward(loss)
            optimizer.step(params.flat_arrays(), [n.grad for n in nodes])
            loss_sum += loss.item()
            md_sum += md_v
            cd_sum += cd_v
        nb = max(1, len(batches))
        val = _validation_loss(params, source, val_idx)
        trace.append(TraceEntry(epoch, loss_sum / nb, md_sum / nb,
                                cd_sum / nb, val))
        if val is not None and config.early_stop_patience > 0:
            if val < best_val:
                best_val = val
                best_params = params.copy()
                patience_left = config.early_stop_patience
            else:
                patience_left -= 1
                if patience_left <= 0:
                    break
    if best_params is not None:
        params = best_params
    return params, trace


# -- evaluation -----------------------------------------------------------------

@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    auc: float


@dataclass(frozen=True)
class RegressionMetrics:
    rmse: float
    r2: float
    re: float


def _auc_mann_whitney(scores, labels) -> float:
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ContractViolation("AUC undefined: dataset has a single class")
    order = np.argsort(np.concatenate([pos, neg]), kind="stable")
    all_scores = np.concatenate([pos, neg])[order]
    ranks = np.empty_like(all_scores)
    # average ranks over tie groups (Mann-Whitney, ties counted half)
    n = all_scores.size
    i = 0
    base = np.arange(1, n + 1, dtype=np.float64)
    ranks[:] = base
    while i < n:
        j = i
        while j + 1 < n and all_scores[j + 1] == all_scores[i]:
            j += 1
        if j > i:
            ranks[i:j + 1] = 0.5 * (base[i] + base[j])
        i = j + 1
    pos_rank_sum = ranks[order.argsort()[:pos.size]].sum()
    u = pos_rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def evaluate_classification(params: ModelParams, ds: Dataset) -> ClassificationMetrics:
    """Accuracy under argmax and the Mann-Whitney AUC of class-1 scores."""
    if ds.labels is None:
        raise ContractViolation("evaluate_classification: dataset is unlabeled")
    probs = predict_proba(ds.features, params)
    acc = float(np.mean(np.argmax(probs, axis=1) == ds.labels))
    auc = _auc_mann_whitney(probs[:, 1], np.asarray(ds.labels))
    return ClassificationMetrics(accuracy=acc, auc=auc)


def evaluate_regression(params: ModelParams, ds: Dataset,
                        stats: MinMaxStats) -> RegressionMetrics:
    """RMSE and R2 on the normalized scale; relative error on the original scale."""
    if ds.labels is None:
        raise ContractViolation("evaluate_regression: dataset is unlabeled")
    y = np.asarray(ds.labels, dtype=np.float64)
    pred = predict_regression(ds.features, params)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ContractViolation("evaluate_regression: R2 undefined for zero-variance targets")
    resid = pred - y
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    y_orig = stats.denormalize_labels(y)
    pred_orig = stats.denormalize_labels(pred)
    denom = np.maximum(np.abs(y_orig), 1e-12)
    re = float(np.mean(np.abs(pred_orig - y_orig) / denom))
    return RegressionMetrics(rmse=rmse, r2=r2, re=re)


# -- reporting, diagnostics, grid search ------------------------------------------

@dataclass
class MetricsReport:
    task: str
    method: str
    config: dict
    per_seed: list
    aggregate: dict
    trace: list

    def to_dict(self) -> dict:
        return {"task": self.task, "method": self.method, "config": self.config,
                "per_seed": self.per_seed, "aggregate": self.aggregate,
                "trace": self.trace}


def aggregate_metrics(per_seed: list[dict]) -> dict:
    """Mean and standard deviation of every numeric per-seed field."""
    agg = {}
    for key in per_seed[0]:
        vals = [p[key] for p in per_seed if isinstance(p[key], (int, float))]
        if len(vals) != len(per_seed):
            continue
        arr = np.array(vals, dtype=np.float64)
        agg[key] = {"mean": float(arr.mean()),
                    "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}
    return agg


def learned_shift(params: ModelParams, source: Dataset, target: Dataset,
                  config: TrainConfig) -> tuple[float, float]:
    """Unweighted MD and CD of the learned features on the full domains.

    Uses H1/H2 from the config with unit weights so the numbers are
    comparable across methods regardless of alpha/beta.
    """
    fs = extract_features(source.features, params).value
    ft = extract_features(target.features, params).value
    md = sum(dv.marginal_divergence(fs[:, i], ft[:, i], config.h1)
             for i in range(fs.shape[1]))
    cd = 0.0
    if fs.shape[1] >= 2 and config.h2.tag in ("kl", "chi2", "w2", "mmd"):
        cd = cop.copula_distance(fs, ft,
                                 cop.PairWeights.uniform(fs.shape[1], 1.0),
                                 config.h2, config.tanh_a)
    return float(md), float(cd)


def run_experiment(task: str, source: Dataset, target: Dataset,
                   config: TrainConfig, seeds, stats: MinMaxStats | None = None,
                   eval_target: Dataset | None = None) -> MetricsReport:
    """Train/evaluate one configuration across seeds and aggregate.

    ``eval_target`` supplies the labeled target set for scoring (defaults
    to ``target``); regression scoring requires the normalization stats.
    """
    eval_ds = eval_target if eval_target is not None else target
    per_seed = []
    first_trace = None
    for s in seeds:
        cfg = replace(config, seed=int(s))
        params, trace = train(source, target.unlabeled(), cfg)
        if first_trace is None:
            first_trace = [t.to_dict() for t in trace]
        md, cd = learned_shift(params, source, target, cfg)
        entry = {"seed": int(s), "md": md, "cd": cd,
                 "val": min((t.val for t in trace if t.val is not None),
                            default=trace[-1].loss)}
        if config.model.task == "classification":
            m = evaluate_classification(params, eval_ds)
            entry.update(accuracy=m.accuracy, auc=m.auc)
        else:
            if stats is None:
                raise ContractViolation("run_experiment: regression needs the scaler stats")
            m = evaluate_regression(params, eval_ds, stats)
            entry.update(rmse=m.rmse, r2=m.r2, re=m.re)
        per_seed.append(entry)
    return MetricsReport(task=task, method=config.method, config=config.to_dict(),
                         per_seed=per_seed, aggregate=aggregate_metrics(per_seed),
                         trace=first_trace or [])


class GridSearchError(RuntimeError):
    """A grid point failed; carries completed reports and failure notes."""

    def __init__(self, message, partial, failures):
        super().__init__(message)
        self.partial = partial
        self.failures = failures


def grid_search(source: Dataset, target: Dataset, base: TrainConfig,
                alphas, betas, seeds, stats: MinMaxStats | None = None,
                eval_target: Dataset | None = None) -> list[MetricsReport]:
    """Cartesian (alpha, beta) sweep, sorted by mean source-holdout loss.

    Target labels are never consulted; the ordering metric is the best
    validation loss each run achieved. Failures abort the sweep with a
    GridSearchError carrying the completed portion.
    """
    if not list(alphas) or not list(betas):
        raise ContractViolation("grid_search: alpha/beta grids must be nonempty")
    reports, failures = [], []
    for a in alphas:
        for b in betas:
            try:
                cfg = replace(base, alpha=float(a), beta=float(b))
                rep = run_experiment(f"grid(alpha={a}, beta={b})", source, target,
                                     cfg, seeds, stats=stats, eval_target=eval_target)
                rep.config["grid_point"] = {"alpha": float(a), "beta": float(b)}
                reports.append(rep)
            except Exception as exc:
                failures.append({"alpha": float(a), "beta": float(b),
                                 "error": f"{type(exc).__name__}: {exc}"})
    reports.sort(key=lambda r: r.aggregate["val"]["mean"])
    if failures:
        raise GridSearchError(
            f"grid_search: {len(failures)} grid point(s) failed", reports, failures)
    return reports


@dataclass(frozen=True)
class ShiftReport:
    md_per_feature: list
    cd: float | None
    feature_names: list

    def to_dict(self) -> dict:
        return {"md_per_feature": self.md_per_feature, "cd": self.cd,
                "feature_names": self.feature_names}


def shift_report(a: Dataset, b: Dataset, h1: dv.DivergenceKind,
                 h2: cop.DependenceKind, beta: cop.PairWeights | None = None,
                 tanh_a: float = 100.0) -> ShiftReport:
    """Per-feature marginal divergences and the copula distance of raw data."""
    if a.dim != b.dim:
        raise ContractViolation(f"shift_report: dimension mismatch {a.dim} vs {b.dim}")
    md = [float(dv.marginal_divergence(a.features[:, i], b.features[:, i], h1))
          for i in range(a.dim)]
    cd = None
    if a.dim >= 2:
        if beta is None:
            beta = cop.PairWeights.uniform(a.dim, 1.0)
        cd = cop.copula_distance(a.features, b.features, beta, h2, tanh_a)
    return ShiftReport(md_per_feature=md, cd=cd, feature_names=list(a.feature_names))
