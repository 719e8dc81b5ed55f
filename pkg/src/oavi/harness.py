"""Dataset loading, seeded splits, cross-validated grid search, experiments and
model/report serialization."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import platform
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sklearn

from .evaluation import Polynomial
from .fitter import GeneratorSet, OaviConfig
from .monomials import ORDER_CONVENTION, Term
from .pipeline import (
    ClassTransformer,
    LinearOvrClassifier,
    MinMaxScaler,
    OaviPipeline,
    compute_metrics,
    error_rate,
    fit_transformer,
    train_classifier,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT = "oavi-model"
MODEL_VERSION = 1
RNG_NAME = "numpy PCG64 seeded through SeedSequence"

DEFAULT_PSI = (0.1, 0.05, 0.01, 0.005, 0.001)
DEFAULT_LAM = (0.0, 0.1, 1.0)
DEFAULT_C = (0.1, 1.0, 10.0)


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Unreadable or malformed dataset (CLI exit code 3)."""


class NumericError(RuntimeError):
    """Numerical failure while fitting (CLI exit code 4)."""


# -- data -------------------------------------------------------------------


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray  # integer labels 0..k-1
    feature_names: list[str]
    label_names: list[str]  # original label of class i

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.feature_names, self.label_names)


def load_csv(path, label_col: str | int | None = None) -> LabeledDataset:
    """Read a headed UTF-8 CSV. ``label_col`` is a header name or a 0-based
    index; by default the last column holds the labels.

    Labels are remapped to ``0..k-1`` in order of first occurrence.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    if len(header) < 2:
        raise DataError("need at least one feature column and one label column")

    if label_col is None:
        j = len(header) - 1
    elif isinstance(label_col, int) or (isinstance(label_col, str) and label_col not in header and label_col.lstrip("-").isdigit()):
        j = int(label_col)
        if not -len(header) <= j < len(header):
            raise DataError(f"label column index {j} out of range")
        j %= len(header)
    elif label_col in header:
        j = header.index(label_col)
    else:
        raise DataError(f"label column {label_col!r} not found; columns are {header}")

    feature_cols = [i for i in range(len(header)) if i != j]
    X = np.empty((len(body), len(feature_cols)))
    labels = []
    for r, row in enumerate(body, start=2):  # 1-based file line, header is line 1
        if len(row) != len(header):
            raise DataError(f"line {r}: expected {len(header)} cells, got {len(row)}")
        for out, i in enumerate(feature_cols):
            cell = row[i].strip()
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"line {r}, column {header[i]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(value):
                raise DataError(f"line {r}, column {header[i]!r}: non-finite value {cell!r}")
            X[r - 2, out] = value
        labels.append(row[j].strip())
    names = list(dict.fromkeys(labels))
    index = {name: i for i, name in enumerate(names)}
    y = np.array([index[v] for v in labels], dtype=np.int64)
    return LabeledDataset(X, y, [header[i] for i in feature_cols], names)


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def split(m: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled, unstratified train/test index split with ``round(fraction*m)`` training points."""
    if not 0 < fraction < 1:
        raise ConfigError(f"train fraction must lie in (0, 1), got {fraction}")
    perm = rng.permutation(m)
    n_train = int(math.floor(fraction * m + 0.5))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split_dataset(data: LabeledDataset, fraction: float, seed) -> tuple[LabeledDataset, LabeledDataset]:
    tr, te = split(data.X.shape[0], fraction, make_rng(seed))
    missing = set(range(data.n_classes)) - set(data.y[tr].tolist())
    if missing:
        logger.warning("classes %s are absent from the training split", sorted(missing))
    return data.subset(tr), data.subset(te)


def kfold(m: int, folds: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled folds as ``(train_idx, val_idx)`` pairs."""
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if folds > m:
        raise ConfigError(f"{folds} folds for {m} points")
    parts = np.array_split(rng.permutation(m), folds)
    return [
        (np.sort(np.concatenate(parts[:i] + parts[i + 1:])), np.sort(parts[i]))
        for i in range(folds)
    ]


# -- configuration ----------------------------------------------------------


def parse_epsilon_rule(rule: str):
    """``"psi/K"``, ``"psi*F"`` or a plain number; returns ``psi -> eps``."""
    rule = rule.replace(" ", "")
    m = re.fullmatch(r"psi(?:([/*])([0-9.eE+-]+))?", rule)
    try:
        if m:
            if m.group(1) is None:
                return lambda psi: psi
            v = float(m.group(2))
            if m.group(1) == "/":
                if v < 1:
                    raise ConfigError("psi/K needs K >= 1")
                return lambda psi: psi / v
            if not 0 <= v <= 1:
                raise ConfigError("psi*F needs 0 <= F <= 1")
            return lambda psi: psi * v
        v = float(rule)
    except ValueError:
        raise ConfigError(f"cannot parse epsilon rule {rule!r}") from None
    if v < 0:
        raise ConfigError("epsilon must be nonnegative")
    return lambda psi: min(v, psi)


@dataclass
class ExperimentConfig:
    data: str | None = None
    label_col: str | int | None = None
    train_frac: float = 0.6
    reps: int = 10
    seed: int = 0
    folds: int = 3
    psi_grid: tuple = DEFAULT_PSI
    lam_grid: tuple = DEFAULT_LAM
    C_grid: tuple = DEFAULT_C
    oracle: str = "pfw"
    tau: float = 50.0
    max_degree: int = 10
    epsilon_rule: str = "psi/2"
    clamp: bool = True
    max_iter: int = 10_000

    def __post_init__(self):
        self.psi_grid = tuple(float(v) for v in self.psi_grid)
        self.lam_grid = tuple(float(v) for v in self.lam_grid)
        self.C_grid = tuple(float(v) for v in self.C_grid)
        if not 0 < self.train_frac < 1:
            raise ConfigError("train fraction must lie in (0, 1)")
        if self.reps < 1:
            raise ConfigError("need at least one repetition")
        if self.folds < 2:
            raise ConfigError("need at least 2 folds")
        if not (self.psi_grid and self.lam_grid and self.C_grid):
            raise ConfigError("hyperparameter grids must be nonempty")
        if any(v <= 0 for v in self.psi_grid) or any(v < 0 for v in self.lam_grid) or any(v <= 0 for v in self.C_grid):
            raise ConfigError("need psi > 0, lambda >= 0 and C > 0 in the grids")
        parse_epsilon_rule(self.epsilon_rule)
        try:
            self.oavi_config(self.psi_grid[0], self.lam_grid[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def oavi_config(self, psi: float, lam: float) -> OaviConfig:
        return OaviConfig(
            psi=psi, eps=parse_epsilon_rule(self.epsilon_rule)(psi), lam=lam, tau=self.tau,
            max_degree=self.max_degree, oracle=self.oracle, max_iter=self.max_iter,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("psi_grid", "lam_grid", "C_grid"):
            d[k] = list(d[k])
        return d

    def with_grid_file(self, path) -> "ExperimentConfig":
        """Override grids from a JSON file with optional keys ``psi``, ``lambda``, ``C``."""
        try:
            grid = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read grid file {path}: {exc}") from exc
        if not isinstance(grid, dict) or set(grid) - {"psi", "lambda", "C"}:
            raise ConfigError("grid file must be an object with keys among psi, lambda, C")
        kw = {}
        for key, attr in (("psi", "psi_grid"), ("lambda", "lam_grid"), ("C", "C_grid")):
            if key in grid:
                if not isinstance(grid[key], list):
                    raise ConfigError(f"grid {key!r} must be a list")
                kw[attr] = grid[key]
        return dataclasses.replace(self, **kw)


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# -- cross-validation -------------------------------------------------------


@dataclass
class CVResult:
    best: tuple[float, float, float]  # (psi, lam, C)
    table: list[dict] = field(default_factory=list)


def _selection_key(row):
    # lowest error, then larger psi, larger lambda, smaller C
    return (row["error"], -row["psi"], -row["lam"], row["C"])


def cross_validate(X, y, cfg: ExperimentConfig, rng: np.random.Generator) -> CVResult:
    """Grid search over (psi, lambda, C) by mean validation error over ``cfg.folds`` folds.

    Scaling and generators are refitted on each fold's training part; one
    generator fit per (fold, psi, lambda) serves every C.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    grid = list(itertools.product(cfg.psi_grid, cfg.lam_grid, cfg.C_grid))
    errors = {p: [] for p in grid}
    failures = {}
    for tr, va in kfold(X.shape[0], cfg.folds, rng):
        assert not np.intersect1d(tr, va).size
        for psi, lam in itertools.product(cfg.psi_grid, cfg.lam_grid):
            try:
                t = fit_transformer(X[tr], y[tr], cfg.oavi_config(psi, lam), cfg.clamp)
                F_tr, F_va = t.transform(X[tr]), t.transform(X[va])
            except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
                for C in cfg.C_grid:
                    failures.setdefault((psi, lam, C), repr(exc))
                continue
            for C in cfg.C_grid:
                try:
                    clf = train_classifier(F_tr, y[tr], C)
                    errors[(psi, lam, C)].append(error_rate(y[va], clf.predict(F_va)))
                except (FloatingPointError, ValueError) as exc:
                    failures.setdefault((psi, lam, C), repr(exc))
    table = []
    for p in grid:
        ok = p not in failures and len(errors[p]) == cfg.folds
        table.append({
            "psi": p[0], "lam": p[1], "C": p[2],
            "error": float(np.mean(errors[p])) if ok else None,
            "failure": failures.get(p),
        })
    valid = [row for row in table if row["error"] is not None]
    if not valid:
        diag = "; ".join(f"(psi={r['psi']}, lam={r['lam']}, C={r['C']}): {r['failure']}" for r in table)
        raise NumericError(f"every grid point failed: {diag}")
    best = min(valid, key=_selection_key)
    return CVResult((best["psi"], best["lam"], best["C"]), table)


# -- experiments ------------------------------------------------------------


def _environment() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scikit-learn": sklearn.__version__,
        "rng": RNG_NAME,
        "order": ORDER_CONVENTION,
    }


def run_experiment(cfg: ExperimentConfig, data: LabeledDataset | None = None, model_path=None) -> dict:
    """Repeated split / cross-validate / refit / evaluate protocol.

    Returns the report as a dict. Timing values live only under the
    ``"timing"`` key so that everything else is reproducible byte for byte.
    When ``model_path`` is given the model of the last repetition is saved.
    """
    if data is None:
        if cfg.data is None:
            raise ConfigError("no dataset given")
        data = load_csv(cfg.data, cfg.label_col)
    start = time.perf_counter()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)
    reps, timing, last = [], [], None
    for r, ss in enumerate(seeds):
        rng = make_rng(ss)
        try:
            tr, te = split(data.X.shape[0], cfg.train_frac, rng)
            X_tr, y_tr, X_te, y_te = data.X[tr], data.y[tr], data.X[te], data.y[te]
            t0 = time.perf_counter()
            cv = cross_validate(X_tr, y_tr, cfg, rng)
            t1 = time.perf_counter()
            psi, lam, C = cv.best
            model = OaviPipeline(cfg.oavi_config(psi, lam), C, cfg.clamp).fit(X_tr, y_tr)
            t2 = time.perf_counter()
            metrics = compute_metrics(
                model.transformer, model.classifier, (X_tr, y_tr, X_te, y_te),
                {"search_time": t1 - t0, "train_time": t2 - t1},
            )
        except (ConfigError, DataError, NumericError) as exc:
            raise type(exc)(f"repetition {r}: {exc}") from exc
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericError(f"repetition {r}: {exc}") from exc
        reps.append({
            "repetition": r,
            "train_size": int(tr.shape[0]),
            "test_size": int(te.shape[0]),
            "best": {"psi": psi, "lambda": lam, "C": C},
            "metrics": metrics.to_dict(timing=False),
            "cv": cv.table,
            "classifier_converged": all(model.classifier.converged),
            "empty_classes": [int(c) for c in model.transformer.empty_classes],
        })
        timing.append({k: getattr(metrics, k) for k in metrics.TIMING_FIELDS})
        last = model
        logger.info("repetition %d: best %s, test error %.2f%%", r, cv.best, metrics.test_error)
    keys = reps[0]["metrics"].keys()
    mean = {k: float(np.mean([rep["metrics"][k] for rep in reps])) for k in keys}
    std = {k: float(np.std([rep["metrics"][k] for rep in reps])) for k in keys}
    report = {
        "config": cfg.to_dict(),
        "config_fingerprint": fingerprint(cfg.to_dict()),
        "dataset": {
            "n_samples": int(data.X.shape[0]),
            "n_features": int(data.X.shape[1]),
            "n_classes": data.n_classes,
        },
        "environment": _environment(),
        "repetitions": reps,
        "mean": mean,
        "std": std,
        "timing": {
            "repetitions": timing,
            "mean": {k: float(np.mean([t[k] for t in timing])) for k in timing[0]},
            "total": time.perf_counter() - start,
        },
    }
    if model_path is not None:
        save_model(last, model_path, data.feature_names, data.label_names)
    return report


def report_json(report: dict, timing: bool = True) -> str:
    """Canonical JSON text; ``timing=False`` drops the timing block."""
    if not timing:
        report = {k: v for k, v in report.items() if k != "timing"}
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(report_json(report), encoding="utf-8")


# -- model serialization ----------------------------------------------------


def _generator_set_to_dict(gs: GeneratorSet) -> dict:
    return {
        "terms": [list(t.exponents) for t in gs.terms],
        "generators": [
            {"leading": list(g.leading_term.exponents), "coefficients": g.coefficients.tolist()}
            for g in gs.generators
        ],
        "generator_mse": list(gs.generator_mse),
        "generator_objective": list(gs.generator_objective),
        "degree_reached": gs.degree_reached,
        "capped": gs.capped,
    }


def _generator_set_from_dict(d: dict, n: int) -> GeneratorSet:
    terms = [Term(e) for e in d["terms"]]
    gens = []
    for g in d["generators"]:
        c = np.array(g["coefficients"], dtype=np.float64)
        gens.append(Polynomial(tuple(terms[: c.shape[0]]) + (Term(g["leading"]),), c))
    gs = GeneratorSet(gens, terms, list(d["generator_mse"]), list(d["generator_objective"]), n)
    gs.degree_reached = d["degree_reached"]
    gs.capped = d["capped"]
    return gs


def model_to_dict(model: OaviPipeline, feature_names=None, label_names=None) -> dict:
    t, clf = model.transformer, model.classifier
    n = t.scaler.n_features
    config = dataclasses.asdict(model.config)
    body = {
        "variables": list(feature_names) if feature_names is not None else [f"x{i + 1}" for i in range(n)],
        "labels": [str(v) for v in label_names] if label_names is not None else None,
        "classes": t.classes.tolist(),
        "config": config,
        "C": model.C,
        "clamp": model.clamp,
        "scaler": {"low": t.scaler.low.tolist(), "span": t.scaler.span.tolist()},
        "generator_sets": [_generator_set_to_dict(gs) for gs in t.generator_sets],
        "classifier": {
            "classes": clf.classes.tolist(),
            "coef": clf.coef.tolist(),
            "intercept": clf.intercept.tolist(),
            "tol": clf.tol,
            "max_iter": clf.max_iter,
            "converged": list(clf.converged),
        },
    }
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "order": ORDER_CONVENTION,
        "config_fingerprint": fingerprint(config),
        **body,
    }


def model_from_dict(d: dict) -> tuple[OaviPipeline, dict]:
    """Rebuild a fitted pipeline; the second value holds variable and label names."""
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise DataError("not a model file of a supported version")
    if d.get("order") != ORDER_CONVENTION:
        raise DataError("model uses a different term order")
    config = OaviConfig(**d["config"])
    if fingerprint(dataclasses.asdict(config)) != d["config_fingerprint"]:
        raise DataError("config fingerprint mismatch")
    n = len(d["variables"])
    scaler = MinMaxScaler(np.array(d["scaler"]["low"]), np.array(d["scaler"]["span"]), d["clamp"])
    sets = [_generator_set_from_dict(g, n) for g in d["generator_sets"]]
    transformer = ClassTransformer(scaler, sets, np.array(d["classes"]), config)
    c = d["classifier"]
    clf = LinearOvrClassifier(
        C=d["C"], tol=c["tol"], max_iter=c["max_iter"], classes=np.array(c["classes"]),
        coef=np.array(c["coef"], dtype=np.float64).reshape(len(c["classes"]), -1),
        intercept=np.array(c["intercept"], dtype=np.float64), converged=list(c["converged"]),
    )
    model = OaviPipeline(config, d["C"], d["clamp"], transformer, clf)
    return model, {"variables": d["variables"], "labels": d["labels"]}


def save_model(model: OaviPipeline, path, feature_names=None, label_names=None) -> None:
    text = json.dumps(model_to_dict(model, feature_names, label_names), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> tuple[OaviPipeline, dict]:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    try:
        return model_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed model file {path}: {exc}") from exc
