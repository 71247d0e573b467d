"""Misconfiguration diagnosis: standalone, unified, and transfer architectures.

All three share one deterministic linear max-margin base learner trained on
the 13-dimension KPI vectors.  The transfer architecture trains one model
per cell, measures cross-cell distribution distance with an information-gain
weighted symmetrized Kullback-Leibler divergence over shared equal-frequency
bins, and lets every model vote with weight ``exp(-beta * divergence)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ContractViolation, DegenerateTrainingError, ValidationError
from .scenario import CONFIG_CLASSES, ConfigClass
from .sim import FEATURE_NAMES, Instance, N_FEATURES

MODEL_SCHEMA_VERSION = 1

N_CLASSES = len(CONFIG_CLASSES)


# ---------------------------------------------------------------------------
# instance sets


@dataclass
class InstanceSet:
    """Column-oriented view of labeled instances sharing one feature schema."""

    X: np.ndarray           # (n, n_features) float
    y: np.ndarray           # (n,) class indices into CONFIG_CLASSES
    cell_ids: np.ndarray    # (n,) int
    epoch_ids: np.ndarray   # (n,) int
    schema: tuple = FEATURE_NAMES

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.cell_ids = np.asarray(self.cell_ids, dtype=int)
        self.epoch_ids = np.asarray(self.epoch_ids, dtype=int)
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.X.shape[1] != len(self.schema):
            raise ValidationError(f"X must be (n, {len(self.schema)})")
        if not (self.y.shape == self.cell_ids.shape == self.epoch_ids.shape == (n,)):
            raise ValidationError("y, cell_ids, epoch_ids must all have length n")
        if n and (self.y.min() < 0 or self.y.max() >= N_CLASSES):
            raise ValidationError("labels outside the configuration class set")

    @classmethod
    def from_instances(cls, instances: Iterable[Instance]) -> "InstanceSet":
        instances = list(instances)
        if not instances:
            return cls(np.zeros((0, N_FEATURES)), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int))
        return cls(
            X=np.stack([i.features.as_array() for i in instances]),
            y=np.array([CONFIG_CLASSES.index(i.label) for i in instances]),
            cell_ids=np.array([i.cell_id for i in instances]),
            epoch_ids=np.array([i.epoch_id for i in instances]),
        )

    def __len__(self) -> int:
        return int(self.X.shape[0])

    def select(self, mask) -> "InstanceSet":
        return InstanceSet(self.X[mask], self.y[mask], self.cell_ids[mask],
                           self.epoch_ids[mask], self.schema)

    def for_cell(self, cell_id: int) -> "InstanceSet":
        return self.select(self.cell_ids == cell_id)

    def for_labels(self, labels: Sequence[ConfigClass]) -> "InstanceSet":
        wanted = {CONFIG_CLASSES.index(l) for l in labels}
        return self.select(np.isin(self.y, list(wanted)))

    def cells(self) -> np.ndarray:
        return np.unique(self.cell_ids)

    def labels(self) -> list[ConfigClass]:
        return [CONFIG_CLASSES[i] for i in self.y]


def _check_schema(a: InstanceSet, b: InstanceSet) -> None:
    if a.schema != b.schema:
        raise ContractViolation("instance sets use different feature schemas")


# ---------------------------------------------------------------------------
# discretization, entropy, divergence


def quantile_bins(X: np.ndarray, n_bins: int = 8) -> list[np.ndarray]:
    """Equal-frequency inner bin edges per dimension, duplicates collapsed.

    Heavy-tailed KPI counts produce repeated quantiles; collapsing them keeps
    every bin nonempty in expectation.  A constant dimension yields no edges
    (a single bin).
    """
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise ValidationError("cannot build bins from an empty instance set")
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    edges = []
    for d in range(X.shape[1]):
        e = np.unique(np.quantile(X[:, d], qs))
        if e.size and np.ptp(X[:, d]) == 0.0:
            e = np.empty(0)
        edges.append(e)
    return edges


def bin_probabilities(x: np.ndarray, edges: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Additively smoothed bin probabilities of samples on the shared edges."""
    n_bins = len(edges) + 1
    counts = np.bincount(np.searchsorted(edges, x, side="right"), minlength=n_bins).astype(float)
    return (counts + alpha) / (counts.sum() + alpha * n_bins)


def _entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def info_gain(instances: InstanceSet, dim, bins: Optional[list[np.ndarray]] = None) -> float:
    """Mutual information (bits) between one discretized dimension and the labels.

    ``dim`` is a feature name or index; ``bins`` is the shared binning scheme
    (computed from the instance set itself when omitted).
    """
    if len(instances) == 0:
        raise ValidationError("info_gain needs a nonempty instance set")
    if isinstance(dim, str):
        if dim not in instances.schema:
            raise ValidationError(f"unknown feature dimension {dim!r}")
        dim = instances.schema.index(dim)
    edges = (bins if bins is not None else quantile_bins(instances.X))[dim]
    y = instances.y
    h_labels = _entropy_bits(np.bincount(y, minlength=N_CLASSES).astype(float))
    assign = np.searchsorted(edges, instances.X[:, dim], side="right")
    h_cond = 0.0
    n = len(instances)
    for b in np.unique(assign):
        sel = assign == b
        h_cond += (sel.sum() / n) * _entropy_bits(np.bincount(y[sel], minlength=N_CLASSES).astype(float))
    gain = h_labels - h_cond
    return float(min(max(gain, 0.0), h_labels))


def info_gain_all(instances: InstanceSet, bins: Optional[list[np.ndarray]] = None) -> np.ndarray:
    if bins is None:
        bins = quantile_bins(instances.X)
    return np.array([info_gain(instances, d, bins) for d in range(len(instances.schema))])


def jeffreys_divergence_bits(p: np.ndarray, q: np.ndarray) -> float:
    """Symmetrized KL divergence in bits between two probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(0.5 * (np.sum(p * np.log2(p / q)) + np.sum(q * np.log2(q / p))))


def cell_divergence(
    target: InstanceSet,
    source: InstanceSet,
    gains: Optional[np.ndarray] = None,
    bins: Optional[list[np.ndarray]] = None,
    alpha: float = 1.0,
) -> float:
    """Information-gain weighted distribution distance between two cells.

    Per dimension, both cells' samples are histogrammed on the shared bins
    (smoothed so the divergence stays finite) and compared with the
    symmetrized KL divergence; the per-dimension values are combined with
    normalized information-gain weights (uniform when all gains are zero).
    Symmetric by construction and zero for identical data.
    """
    _check_schema(target, source)
    if len(target) == 0 or len(source) == 0:
        raise ValidationError("cell_divergence needs nonempty instance sets")
    if bins is None:
        bins = quantile_bins(np.vstack([target.X, source.X]))
    n_dims = len(target.schema)
    if gains is None:
        weights = np.full(n_dims, 1.0 / n_dims)
    else:
        gains = np.asarray(gains, dtype=float)
        total = gains.sum()
        weights = gains / total if total > 0 else np.full(n_dims, 1.0 / n_dims)
    div = 0.0
    for d in range(n_dims):
        p = bin_probabilities(target.X[:, d], bins[d], alpha)
        q = bin_probabilities(source.X[:, d], bins[d], alpha)
        div += weights[d] * jeffreys_divergence_bits(p, q)
    return float(div)


def pairwise_divergences(
    sets: Sequence[InstanceSet],
    gains: np.ndarray,
    bins: list[np.ndarray],
    alpha: float = 1.0,
) -> np.ndarray:
    """Symmetric divergence matrix between per-cell instance sets."""
    n = len(sets)
    n_dims = len(bins)
    total = gains.sum()
    weights = gains / total if total > 0 else np.full(n_dims, 1.0 / n_dims)
    # per-dimension smoothed histograms, then one broadcasted Jeffreys sum
    out = np.zeros((n, n))
    for d in range(n_dims):
        probs = np.stack([bin_probabilities(s.X[:, d], bins[d], alpha) for s in sets])
        logp = np.log2(probs)
        # kl[i, j] = sum_b p_i (log p_i - log p_j)
        cross = logp @ probs.T  # cross[j, i] = sum_b p_i log p_j  (transposed use below)
        self_term = np.sum(probs * logp, axis=1)
        kl = self_term[:, None] - cross.T
        out += weights[d] * 0.5 * (kl + kl.T)
    np.fill_diagonal(out, 0.0)
    return out


# ---------------------------------------------------------------------------
# deterministic linear max-margin learner


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the one-vs-rest hinge-loss learner."""

    l2: float = 0.01
    iters: int = 600
    lr: float = 0.5
    lr_decay: float = 0.02
    seed: int = 0


@dataclass
class LinearModel:
    """One-vs-rest linear classifier on standardized features."""

    classes: tuple[int, ...]        # class indices present at training time
    W: np.ndarray                   # (n_classes_present, n_features)
    b: np.ndarray                   # (n_classes_present,)
    mu: np.ndarray
    sigma: np.ndarray
    hyper: TrainConfig
    degenerate: bool = False
    n_train: int = 0
    schema: tuple = FEATURE_NAMES

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.schema):
            raise ContractViolation(f"expected {len(self.schema)} feature dimensions")
        Xs = (X - self.mu) / self.sigma
        return Xs @ self.W.T + self.b

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        scores = self.decision_scores(X)
        cls = np.asarray(self.classes)
        # argmax returns the first maximum; classes are sorted, so exact ties
        # resolve to the lowest class-enum order
        return cls[np.argmax(scores, axis=1)]

    def predict(self, features) -> tuple[ConfigClass, dict[ConfigClass, float]]:
        scores = self.decision_scores(np.asarray(features, dtype=float)[None, :])[0]
        idx = int(np.argmax(scores))
        return CONFIG_CLASSES[self.classes[idx]], {
            CONFIG_CLASSES[c]: float(s) for c, s in zip(self.classes, scores)
        }


def train_linear_classifier(
    instances: InstanceSet,
    sample_weights: Optional[np.ndarray] = None,
    hyper: TrainConfig = TrainConfig(),
) -> LinearModel:
    """Fit the one-vs-rest hinge-loss model with deterministic subgradient descent.

    Features are standardized with the training statistics (zero-variance
    dimensions stay at weight zero).  Instance weights are normalized to mean
    one, so uniformly rescaling them leaves the optimization unchanged.  A
    fixed iteration budget with tail-averaged iterates makes the result
    reproducible; raises :class:`DegenerateTrainingError` when fewer than two
    classes are present.
    """
    n = len(instances)
    if n == 0:
        raise ValidationError("cannot train on an empty instance set")
    present = np.unique(instances.y)
    if present.size < 2:
        raise DegenerateTrainingError(
            f"training set contains a single class {CONFIG_CLASSES[present[0]].value!r}"
        )
    if sample_weights is None:
        u = np.ones(n)
    else:
        u = np.asarray(sample_weights, dtype=float)
        if u.shape != (n,):
            raise ValidationError("sample_weights must match the instance count")
        if np.any(u <= 0):
            raise ValidationError("sample_weights must be positive")
        u = u * (n / u.sum())

    mu = instances.X.mean(axis=0)
    sigma = instances.X.std(axis=0)
    sigma = np.where(sigma > 0, sigma, 1.0)
    Xs = (instances.X - mu) / sigma

    k = present.size
    Y = np.where(instances.y[:, None] == present[None, :], 1.0, -1.0)  # (n, k)
    W = np.zeros((k, Xs.shape[1]))
    b = np.zeros(k)
    w_acc = np.zeros_like(W)
    b_acc = np.zeros_like(b)
    tail_start = hyper.iters // 2
    uy = u[:, None] * Y
    for t in range(hyper.iters):
        scores = Xs @ W.T + b
        active = (1.0 - Y * scores) > 0.0
        coef = uy * active  # (n, k)
        grad_w = -(coef.T @ Xs) / n + hyper.l2 * W
        grad_b = -coef.sum(axis=0) / n
        lr = hyper.lr / (1.0 + hyper.lr_decay * t)
        W -= lr * grad_w
        b -= lr * grad_b
        if t >= tail_start:
            w_acc += W
            b_acc += b
    n_tail = hyper.iters - tail_start
    W = w_acc / n_tail
    b = b_acc / n_tail
    return LinearModel(
        classes=tuple(int(c) for c in present),
        W=W,
        b=b,
        mu=mu,
        sigma=sigma,
        hyper=hyper,
        degenerate=False,
        n_train=n,
    )


def constant_model(label_idx: int, hyper: TrainConfig = TrainConfig()) -> LinearModel:
    """Explicitly marked fallback predictor for single-class training data."""
    return LinearModel(
        classes=(int(label_idx),),
        W=np.zeros((1, N_FEATURES)),
        b=np.zeros(1),
        mu=np.zeros(N_FEATURES),
        sigma=np.ones(N_FEATURES),
        hyper=hyper,
        degenerate=True,
        n_train=0,
    )


def _train_or_constant(instances: InstanceSet, hyper: TrainConfig) -> LinearModel:
    try:
        return train_linear_classifier(instances, hyper=hyper)
    except DegenerateTrainingError:
        model = constant_model(int(instances.y[0]), hyper)
        model.n_train = len(instances)
        return model


# ---------------------------------------------------------------------------
# the three diagnosis architectures


@dataclass
class StandaloneDiagnoser:
    """Per-cell model trained only on that cell's own instances."""

    cell_id: int
    model: LinearModel
    kind: str = "standalone"

    def diagnose_batch(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_batch(X)

    def diagnose(self, features) -> ConfigClass:
        return CONFIG_CLASSES[int(self.diagnose_batch(np.asarray(features)[None, :])[0])]


@dataclass
class UnifiedDiagnoser:
    """Single model pooled over every cell's instances."""

    model: LinearModel
    kind: str = "unified"

    def diagnose_batch(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_batch(X)

    def diagnose(self, features) -> ConfigClass:
        return CONFIG_CLASSES[int(self.diagnose_batch(np.asarray(features)[None, :])[0])]


@dataclass
class TransferEnsemble:
    """Weighted vote over per-cell models for one target cell.

    Vote weights are ``exp(-beta * divergence)`` against the target cell's
    data; the target's own model always votes with weight one.  Exact vote
    ties resolve by class-enum order (the per-model score sums cannot break
    a tie that the enum order has already resolved).
    """

    target_cell: int
    beta: float
    models: dict[int, LinearModel]
    divergences: dict[int, float]
    omegas: dict[int, float] = field(default_factory=dict)
    kind: str = "transfer"

    def __post_init__(self):
        if self.beta <= 0:
            raise ValidationError("beta must be > 0")
        if not self.models:
            raise ContractViolation("transfer ensemble needs at least one model")
        if self.target_cell not in self.models:
            raise ContractViolation("target cell has no model in the ensemble")
        if not self.omegas:
            self.omegas = {
                c: float(np.exp(-self.beta * self.divergences.get(c, 0.0))) for c in self.models
            }
        for c, w in self.omegas.items():
            if not (0.0 < w <= 1.0) or not np.isfinite(w):
                raise ValidationError(f"vote weight for cell {c} outside (0, 1]")

    def diagnose_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        votes = np.zeros((X.shape[0], N_CLASSES))
        for cell, model in sorted(self.models.items()):
            pred = model.predict_batch(X)
            votes[np.arange(X.shape[0]), pred] += self.omegas[cell]
        return np.argmax(votes, axis=1)

    def diagnose(self, features) -> ConfigClass:
        return CONFIG_CLASSES[int(self.diagnose_batch(np.asarray(features)[None, :])[0])]


def diagnose(ensemble: TransferEnsemble, features) -> ConfigClass:
    """Weighted-vote diagnosis of one feature vector."""
    return ensemble.diagnose(features)


def train_standalone(cell_id: int, instances: InstanceSet,
                     hyper: TrainConfig = TrainConfig()) -> StandaloneDiagnoser:
    """Train the cell-specific architecture on one cell's instances only."""
    own = instances.for_cell(cell_id)
    if len(own) == 0:
        raise ValidationError(f"no instances for cell {cell_id}")
    return StandaloneDiagnoser(cell_id=cell_id, model=_train_or_constant(own, hyper))


def train_unified(instances: InstanceSet, hyper: TrainConfig = TrainConfig()) -> UnifiedDiagnoser:
    """Train the pooled architecture on all cells' instances."""
    if len(instances) == 0:
        raise ValidationError("cannot train on an empty instance set")
    return UnifiedDiagnoser(model=_train_or_constant(instances, hyper))


def train_transfer(
    target_cell: int,
    instances: InstanceSet,
    beta: float = 1.0,
    hyper: TrainConfig = TrainConfig(),
    *,
    bins: Optional[list[np.ndarray]] = None,
    gains: Optional[np.ndarray] = None,
    models: Optional[Mapping[int, LinearModel]] = None,
) -> TransferEnsemble:
    """Build the transfer-learning ensemble for one target cell.

    Information gain is computed on the pooled set, per-cell models are
    trained on each cell's own instances, and each model's vote weight
    decays exponentially with its cell's divergence from the target's data.
    ``bins``, ``gains`` and ``models`` may be supplied to share work across
    target cells.
    """
    target_set = instances.for_cell(target_cell)
    if len(target_set) == 0:
        raise ValidationError(f"target cell {target_cell} has no instances")
    if bins is None:
        bins = quantile_bins(instances.X)
    if gains is None:
        gains = info_gain_all(instances, bins)
    cell_list = [int(c) for c in instances.cells()]
    if models is None:
        models = {c: _train_or_constant(instances.for_cell(c), hyper) for c in cell_list}
    divergences = {}
    for c in cell_list:
        if c == target_cell:
            divergences[c] = 0.0
        else:
            divergences[c] = cell_divergence(target_set, instances.for_cell(c), gains, bins)
    return TransferEnsemble(
        target_cell=target_cell,
        beta=beta,
        models=dict(models),
        divergences=divergences,
    )


def evaluate_accuracy(diagnoser, instances: InstanceSet) -> float:
    """Fraction of instances whose diagnosis matches the ground-truth label."""
    if len(instances) == 0:
        raise ValidationError("cannot evaluate on an empty instance set")
    pred = diagnoser.diagnose_batch(instances.X)
    return float(np.mean(pred == instances.y))


# ---------------------------------------------------------------------------
# model persistence (versioned, round-trip exact)


def _model_to_dict(model: LinearModel) -> dict:
    return {
        "classes": list(model.classes),
        "W": model.W.tolist(),
        "b": model.b.tolist(),
        "mu": model.mu.tolist(),
        "sigma": model.sigma.tolist(),
        "hyper": asdict(model.hyper),
        "degenerate": model.degenerate,
        "n_train": model.n_train,
        "schema": list(model.schema),
    }


def _model_from_dict(data: Mapping) -> LinearModel:
    return LinearModel(
        classes=tuple(data["classes"]),
        W=np.array(data["W"], dtype=float).reshape(len(data["classes"]), -1),
        b=np.array(data["b"], dtype=float),
        mu=np.array(data["mu"], dtype=float),
        sigma=np.array(data["sigma"], dtype=float),
        hyper=TrainConfig(**data["hyper"]),
        degenerate=bool(data["degenerate"]),
        n_train=int(data["n_train"]),
        schema=tuple(data["schema"]),
    )


def save_diagnoser(diagnoser, path) -> None:
    """Serialize any diagnoser to versioned JSON; floats round-trip exactly."""
    if isinstance(diagnoser, StandaloneDiagnoser):
        payload = {"kind": "standalone", "cell_id": diagnoser.cell_id,
                   "model": _model_to_dict(diagnoser.model)}
    elif isinstance(diagnoser, UnifiedDiagnoser):
        payload = {"kind": "unified", "model": _model_to_dict(diagnoser.model)}
    elif isinstance(diagnoser, TransferEnsemble):
        payload = {
            "kind": "transfer",
            "target_cell": diagnoser.target_cell,
            "beta": diagnoser.beta,
            "models": {str(c): _model_to_dict(m) for c, m in sorted(diagnoser.models.items())},
            "divergences": {str(c): v for c, v in sorted(diagnoser.divergences.items())},
            "omegas": {str(c): v for c, v in sorted(diagnoser.omegas.items())},
        }
    else:
        raise ValidationError(f"cannot serialize {type(diagnoser).__name__}")
    payload["schema_version"] = MODEL_SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_diagnoser(path):
    with open(path) as fh:
        data = json.load(fh)
    if data.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValidationError(f"unsupported model schema_version {data.get('schema_version')!r}")
    kind = data.get("kind")
    if kind == "standalone":
        return StandaloneDiagnoser(cell_id=int(data["cell_id"]), model=_model_from_dict(data["model"]))
    if kind == "unified":
        return UnifiedDiagnoser(model=_model_from_dict(data["model"]))
    if kind == "transfer":
        return TransferEnsemble(
            target_cell=int(data["target_cell"]),
            beta=float(data["beta"]),
            models={int(c): _model_from_dict(m) for c, m in data["models"].items()},
            divergences={int(c): float(v) for c, v in data["divergences"].items()},
            omegas={int(c): float(v) for c, v in data["omegas"].items()},
        )
    raise ValidationError(f"unknown diagnoser kind {kind!r}")
