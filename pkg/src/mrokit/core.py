"""Data containers shared by every other module.

Samples, datasets with a precomputed importance-weight matrix, weight
families, losses and function classes. Everything here is immutable once
built; arrays are flagged read-only.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ORACLE_TOLERANCE = 1e-8

FINITE = "finite"
INTERVAL = "interval-constant"
LINEAR = "linear-l2-ball"
CLASS_KINDS = (FINITE, INTERVAL, LINEAR)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Sample:
    features: tuple
    label: float
    tag: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """n samples plus the n x |W| matrix of weight values ``w_j(z_i)``."""

    features: np.ndarray
    labels: np.ndarray
    weight_matrix: np.ndarray
    weight_names: tuple
    tags: Optional[np.ndarray] = None
    label_bound: Optional[float] = None

    def __post_init__(self):
        labels = _frozen(self.labels).reshape(-1)
        n = labels.shape[0]
        if n < 1:
            raise ValueError("dataset needs at least one sample")
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(n, -1) if features.size else np.zeros((n, 0))
        if features.shape[0] != n:
            raise ValueError(f"features have {features.shape[0]} rows, labels have {n}")
        W = np.asarray(self.weight_matrix, dtype=float)
        if W.ndim == 1:
            W = W.reshape(n, 1)
        if W.shape[0] != n:
            raise ValueError(f"weight matrix has {W.shape[0]} rows, expected {n}")
        names = tuple(str(s) for s in self.weight_names)
        if W.shape[1] != len(names):
            raise ValueError(
                f"weight matrix has {W.shape[1]} columns but {len(names)} weight names")
        if len(set(names)) != len(names):
            raise ValueError("weight names must be unique")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(labels))
                and np.all(np.isfinite(features))):
            raise ValueError("dataset contains non-finite values")
        if np.any(W < 0):
            i, j = np.argwhere(W < 0)[0]
            raise ValueError(f"negative weight {W[i, j]} at sample {i}, column {names[j]!r}")
        if self.label_bound is not None and np.any(np.abs(labels) > self.label_bound):
            raise ValueError(f"label exceeds declared bound {self.label_bound}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "weight_matrix", _frozen(W))
        object.__setattr__(self, "weight_names", names)
        if self.tags is not None:
            tags = _frozen(self.tags, dtype=np.int64).reshape(-1)
            if tags.shape[0] != n:
                raise ValueError("tags length does not match number of samples")
            object.__setattr__(self, "tags", tags)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_weights(self) -> int:
        return self.weight_matrix.shape[1]

    @property
    def samples(self) -> list:
        tags = self.tags if self.tags is not None else [None] * self.n
        return [Sample(tuple(x), float(y), None if t is None else int(t))
                for x, y, t in zip(self.features, self.labels, tags)]

    def column(self, name_or_index) -> np.ndarray:
        j = name_or_index if isinstance(name_or_index, (int, np.integer)) \
            else self.weight_names.index(name_or_index)
        return self.weight_matrix[:, j]

    def with_weights(self, weight_matrix, weight_names) -> "Dataset":
        return Dataset(self.features, self.labels, weight_matrix, weight_names,
                       tags=self.tags, label_bound=self.label_bound)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], weight_matrix, weight_names,
                     label_bound=None) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ValueError("dataset needs at least one sample")
        dims = {len(s.features) for s in samples}
        if len(dims) != 1:
            raise ValueError(f"inconsistent feature dimensions {sorted(dims)}")
        d = dims.pop()
        X = np.array([s.features for s in samples], dtype=float).reshape(len(samples), d)
        y = [s.label for s in samples]
        has_tags = [s.tag is not None for s in samples]
        if any(has_tags) and not all(has_tags):
            raise ValueError("either every sample carries a tag or none does")
        tags = [s.tag for s in samples] if all(has_tags) else None
        return cls(X, y, weight_matrix, weight_names, tags=tags, label_bound=label_bound)

    # JSON Lines: {"features": [...], "label": y, "tag": t?, "weights": {name: value}}
    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(self.n):
                rec = {"features": [float(v) for v in self.features[i]],
                       "label": float(self.labels[i])}
                if self.tags is not None:
                    rec["tag"] = int(self.tags[i])
                rec["weights"] = {name: float(self.weight_matrix[i, j])
                                  for j, name in enumerate(self.weight_names)}
                fh.write(dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path, weight_names: Optional[Sequence[str]] = None) -> "Dataset":
        samples, rows = [], []
        names = list(weight_names) if weight_names is not None else None
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"line {lineno}: {exc}") from exc
                extra = set(rec) - {"features", "label", "tag", "weights"}
                if extra:
                    raise ValueError(f"line {lineno}: unknown fields {sorted(extra)}")
                try:
                    weights = rec["weights"]
                    if names is None:
                        names = list(weights)
                    if set(weights) != set(names):
                        raise ValueError(f"line {lineno}: weight keys {sorted(weights)} "
                                         f"do not match {sorted(names)}")
                    samples.append(Sample(tuple(float(v) for v in rec["features"]),
                                          float(rec["label"]),
                                          None if rec.get("tag") is None else int(rec["tag"])))
                except (KeyError, TypeError) as exc:
                    raise ValueError(f"line {lineno}: malformed record ({exc})") from exc
                rows.append([float(weights[k]) for k in names])
        if not samples:
            raise ValueError(f"{path}: no samples")
        return cls.from_samples(samples, np.array(rows), names)


@dataclass(frozen=True)
class WeightFamily:
    names: tuple
    per_weight_bound: tuple
    family_bound: float

    def __post_init__(self):
        names = tuple(str(s) for s in self.names)
        bounds = tuple(float(b) for b in self.per_weight_bound)
        if not names:
            raise ValueError("weight family must be nonempty")
        if len(bounds) != len(names):
            raise ValueError("one bound per weight function is required")
        if any(b < 0 or not math.isfinite(b) for b in bounds):
            raise ValueError("per-weight bounds must be finite and nonnegative")
        if self.family_bound < 1:
            raise ValueError("family bound B must be >= 1")
        if any(b > self.family_bound for b in bounds):
            raise ValueError(f"per-weight bounds {bounds} exceed family bound {self.family_bound}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "per_weight_bound", bounds)
        object.__setattr__(self, "family_bound", float(self.family_bound))

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_bounds(cls, names, bounds) -> "WeightFamily":
        bounds = [float(b) for b in bounds]
        return cls(tuple(names), tuple(bounds), max([1.0] + bounds))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "per_weight_bound": list(self.per_weight_bound),
                "family_bound": self.family_bound}

    @classmethod
    def from_dict(cls, d) -> "WeightFamily":
        unknown = set(d) - {"names", "per_weight_bound", "family_bound"}
        if unknown:
            raise ValueError(f"unknown weight family keys {sorted(unknown)}")
        if "family_bound" not in d:
            return cls.from_bounds(d["names"], d["per_weight_bound"])
        return cls(tuple(d["names"]), tuple(d["per_weight_bound"]), d["family_bound"])


@dataclass(frozen=True)
class LossSpec:
    """Pointwise loss with a declared range ``[0, bound]``.

    ``kind`` is ``"squared"``, ``"absolute"`` or ``"custom"``; a custom loss
    supplies ``fn(labels, predictions) -> losses``.
    """

    kind: str = "squared"
    bound: float = 1.0
    lipschitz: float = 2.0
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("squared", "absolute", "custom"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom loss needs fn")
        if not self.bound > 0:
            raise ValueError("loss bound must be positive")

    def __call__(self, labels, predictions) -> np.ndarray:
        y = np.asarray(labels, dtype=float)
        p = np.asarray(predictions, dtype=float)
        if self.kind == "squared":
            out = (p - y) ** 2
        elif self.kind == "absolute":
            out = np.abs(p - y)
        else:
            out = np.asarray(self.fn(y, p), dtype=float)
        if np.any(out > self.bound * (1 + 1e-9)) or np.any(out < 0):
            raise ValueError(f"loss values outside declared range [0, {self.bound}]")
        return out

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom losses are not serializable")
        return {"kind": self.kind, "bound": self.bound, "lipschitz": self.lipschitz}

    @classmethod
    def from_dict(cls, d) -> "LossSpec":
        unknown = set(d) - {"kind", "bound", "lipschitz"}
        if unknown:
            raise ValueError(f"unknown loss keys {sorted(unknown)}")
        if d.get("kind", "squared") == "custom":
            raise ValueError("custom losses cannot be configured from JSON")
        return cls(d.get("kind", "squared"), float(d.get("bound", 1.0)),
                   float(d.get("lipschitz", 2.0)))


@dataclass(frozen=True)
class Hypothesis:
    """A single predictor.

    ``form`` selects the prediction rule: ``"constant"`` (params = (c,)),
    ``"linear"`` (params = beta) or ``"by_tag"`` (params = values, looked up
    through ``tag_keys``). ``index`` is set for members of a finite class.
    """

    class_kind: str
    form: str
    params: tuple
    index: Optional[int] = None
    tag_keys: tuple = ()

    def predict(self, features, tags=None) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        n = X.shape[0]
        if self.form == "constant":
            return np.full(n, self.params[0])
        if self.form == "linear":
            if X.ndim != 2 or X.shape[1] != len(self.params):
                raise ValueError(f"hypothesis expects {len(self.params)} features, "
                                 f"got shape {X.shape}")
            return X @ np.asarray(self.params)
        if self.form == "by_tag":
            if tags is None:
                raise ValueError("tag-indexed hypothesis needs sample tags")
            lookup = dict(zip(self.tag_keys, self.params))
            try:
                return np.array([lookup[int(t)] for t in tags], dtype=float)
            except KeyError as exc:
                raise ValueError(f"no prediction for tag {exc.args[0]}") from None
        raise ValueError(f"unknown hypothesis form {self.form!r}")

    def predict_dataset(self, dataset: Dataset) -> np.ndarray:
        return self.predict(dataset.features, dataset.tags)

    def __call__(self, sample: Sample) -> float:
        return float(self.predict(np.array([sample.features], dtype=float).reshape(1, -1),
                                  None if sample.tag is None else [sample.tag])[0])

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.params, dtype=float)

    def to_dict(self) -> dict:
        d = {"class_kind": self.class_kind, "form": self.form,
             "params": [float(v) for v in self.params]}
        if self.index is not None:
            d["index"] = int(self.index)
        if self.tag_keys:
            d["tag_keys"] = [int(t) for t in self.tag_keys]
        return d


def _finite_member(desc, index: int) -> Hypothesis:
    if isinstance(desc, Hypothesis):
        return Hypothesis(FINITE, desc.form, desc.params, index, desc.tag_keys)
    if isinstance(desc, (int, float, np.floating, np.integer)):
        return Hypothesis(FINITE, "constant", (float(desc),), index)
    if isinstance(desc, dict) and len(desc) == 1:
        (form, value), = desc.items()
        if form == "constant":
            return Hypothesis(FINITE, "constant", (float(value),), index)
        if form == "linear":
            return Hypothesis(FINITE, "linear", tuple(float(v) for v in value), index)
        if form == "by_tag":
            keys = tuple(sorted(int(k) for k in value))
            vals = tuple(float(value[k] if k in value else value[str(k)]) for k in keys)
            return Hypothesis(FINITE, "by_tag", vals, index, keys)
    raise ValueError(f"cannot interpret hypothesis descriptor {desc!r}")


@dataclass(frozen=True)
class FunctionClass:
    """Hypothesis class: finite list, constants in [-C, C], or linear in an l2 ball."""

    kind: str
    hypotheses: tuple = ()
    radius: float = 0.0
    dim: int = 0

    def __post_init__(self):
        if self.kind not in CLASS_KINDS:
            raise ValueError(f"unknown function class kind {self.kind!r}")
        if self.kind == FINITE:
            members = tuple(_finite_member(h, i) for i, h in enumerate(self.hypotheses))
            if not members:
                raise ValueError("finite class must be nonempty")
            object.__setattr__(self, "hypotheses", members)
        elif not self.radius > 0:
            raise ValueError("class radius must be positive")

    @classmethod
    def finite(cls, hypotheses) -> "FunctionClass":
        return cls(FINITE, tuple(hypotheses))

    @classmethod
    def interval(cls, C: float) -> "FunctionClass":
        return cls(INTERVAL, radius=float(C))

    @classmethod
    def linear(cls, dim: int, radius: float = 1.0) -> "FunctionClass":
        return cls(LINEAR, radius=float(radius), dim=int(dim))

    def __len__(self):
        if self.kind != FINITE:
            raise TypeError("only finite classes have a length")
        return len(self.hypotheses)

    def hypothesis(self, value, tol: float = ORACLE_TOLERANCE) -> Hypothesis:
        """Build a member from an index (finite), constant (interval) or vector (linear).

        Raises ValueError if the value lies outside the class.
        """
        if self.kind == FINITE:
            if not isinstance(value, (int, np.integer)) or not 0 <= value < len(self.hypotheses):
                raise ValueError(f"index {value!r} outside finite class of size "
                                 f"{len(self.hypotheses)}")
            return self.hypotheses[int(value)]
        if self.kind == INTERVAL:
            c = float(np.asarray(value).reshape(-1)[0])
            if not abs(c) <= self.radius + tol:
                raise ValueError(f"constant {c} outside [-{self.radius}, {self.radius}]")
            return Hypothesis(INTERVAL, "constant", (c,))
        beta = np.asarray(value, dtype=float).reshape(-1)
        if beta.shape[0] != self.dim:
            raise ValueError(f"expected {self.dim} coefficients, got {beta.shape[0]}")
        norm = float(np.linalg.norm(beta))
        if not norm <= self.radius + tol:
            raise ValueError(f"||beta|| = {norm} exceeds radius {self.radius}")
        return Hypothesis(LINEAR, "linear", tuple(float(b) for b in beta))

    def to_dict(self) -> dict:
        if self.kind == FINITE:
            out = []
            for h in self.hypotheses:
                if h.form == "by_tag":
                    out.append({"by_tag": {str(k): v for k, v in zip(h.tag_keys, h.params)}})
                elif h.form == "linear":
                    out.append({"linear": list(h.params)})
                else:
                    out.append(h.params[0])
            return {"kind": FINITE, "hypotheses": out}
        if self.kind == INTERVAL:
            return {"kind": INTERVAL, "radius": self.radius}
        return {"kind": LINEAR, "dim": self.dim, "radius": self.radius}

    @classmethod
    def from_dict(cls, d) -> "FunctionClass":
        kind = d.get("kind")
        allowed = {FINITE: {"kind", "hypotheses"}, INTERVAL: {"kind", "radius"},
                   LINEAR: {"kind", "dim", "radius"}}.get(kind)
        if allowed is None:
            raise ValueError(f"unknown function class kind {kind!r}")
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown function class keys {sorted(unknown)}")
        if kind == FINITE:
            return cls.finite(d["hypotheses"])
        if kind == INTERVAL:
            return cls.interval(d["radius"])
        return cls.linear(d["dim"], d.get("radius", 1.0))


@dataclass(frozen=True)
class ValidationReport:
    column_means: tuple
    renormalized: bool


def validate_dataset(dataset: Dataset, family: WeightFamily, renormalize: bool = False):
    """Check weight columns against the family and optionally rescale them to mean one.

    Returns ``(dataset, family, report)``. When renormalizing, both the
    columns and their declared bounds are divided by the column mean.
    """
    if tuple(dataset.weight_names) != tuple(family.names):
        raise ValueError(f"dataset columns {dataset.weight_names} do not match "
                         f"family {family.names}")
    W = dataset.weight_matrix
    means = W.mean(axis=0)
    for j, name in enumerate(family.names):
        if means[j] <= 0:
            raise ValueError(f"weight column {name!r} is identically zero")
    if not renormalize:
        bounds = np.asarray(family.per_weight_bound)
        over = W > bounds
        if np.any(over):
            i, j = np.argwhere(over)[0]
            raise ValueError(f"weight {W[i, j]} at sample {i} exceeds bound "
                             f"{bounds[j]} of column {family.names[j]!r}")
        return dataset, family, ValidationReport(tuple(float(m) for m in means), False)
    if np.any(W < 0):
        raise ValueError("negative weights")
    W_new = W / means
    bounds = np.asarray(family.per_weight_bound) / means
    # the rescaled data may sit above the declared bound only if the raw data did
    if np.any(W_new > bounds):
        raise ValueError("weight column exceeds its declared bound")
    new_family = WeightFamily.from_bounds(family.names, bounds)
    new_data = dataset.with_weights(W_new, family.names)
    return new_data, new_family, ValidationReport(tuple(float(m) for m in means), True)


def empirical_weight_second_moment(dataset: Dataset, weight_index: int) -> float:
    """Empirical second moment (1/n) sum_i w(z_i)^2 of one weight column."""
    if not 0 <= weight_index < dataset.n_weights:
        raise IndexError(f"weight index {weight_index} out of range")
    col = dataset.weight_matrix[:, weight_index]
    return float(np.mean(col * col))


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def dumps(obj, indent: Optional[int] = None, _level: int = 0) -> str:
    """Deterministic JSON: insertion-ordered keys, floats with 17 significant digits."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = ", " if indent is None else ","
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1)
                 for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + sep.join(pad + dumps(v, indent, _level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")

