import json
from pathlib import Path

import numpy as np
import pytest

from oavi import cli
from oavi.harness import (
    ConfigError,
    DataError,
    ExperimentConfig,
    LabeledDataset,
    NumericError,
    _selection_key,
    cross_validate,
    kfold,
    load_csv,
    load_model,
    make_rng,
    model_from_dict,
    model_to_dict,
    parse_epsilon_rule,
    report_json,
    run_experiment,
    save_model,
    split,
    split_dataset,
)
from oavi.pipeline import OaviPipeline
from oavi.fitter import OaviConfig

IRIS = str(Path(__file__).resolve().parents[1] / "data" / "iris.csv")


def two_circles(k, rng):
    a, b = rng.uniform(0, 2 * np.pi, k), rng.uniform(0, 2 * np.pi, k)
    X = np.vstack([
        np.column_stack([0.3 * np.cos(a), 0.3 * np.sin(a)]),
        np.column_stack([0.45 * np.cos(b), 0.45 * np.sin(b)]),
    ])
    return X, np.repeat([0, 1], k)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_iris():
    d = load_csv(IRIS, "species")
    assert d.X.shape == (150, 4)
    assert d.n_classes == 3
    assert d.label_names == ["setosa", "versicolor", "virginica"]
    assert set(d.y.tolist()) == {0, 1, 2}


def test_load_single_row_and_label_positions(tmp_path):
    p = write(tmp_path, "lab,a,b\ncat,1.5,2\n")
    d = load_csv(p, "lab")
    assert d.X.shape == (1, 2) and d.feature_names == ["a", "b"]
    assert load_csv(p, 0).label_names == ["cat"]
    assert load_csv(p, "0").X.tolist() == [[1.5, 2.0]]


def test_labels_follow_first_occurrence(tmp_path):
    p = write(tmp_path, "a,y\n1,z\n2,a\n3,z\n")
    d = load_csv(p)
    assert d.y.tolist() == [0, 1, 0]
    assert d.label_names == ["z", "a"]


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match=r"line 3, column 'b'"):
        load_csv(write(tmp_path, "a,b,y\n1,2,x\n3,oops,x\n"))
    with pytest.raises(DataError, match="empty"):
        load_csv(write(tmp_path, ""))
    with pytest.raises(DataError, match="not found"):
        load_csv(write(tmp_path, "a,y\n1,2\n"), "label")
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv")
    with pytest.raises(DataError, match="cells"):
        load_csv(write(tmp_path, "a,y\n1,2,3\n"))


def test_split_sizes_and_reproducibility():
    tr, te = split(10, 0.6, make_rng(7))
    assert (tr.size, te.size) == (6, 4)
    tr2, _ = split(10, 0.6, make_rng(7))
    assert np.array_equal(tr, tr2)
    tr, te = split(150, 0.6, make_rng(0))
    assert (tr.size, te.size) == (90, 60)
    assert not np.intersect1d(tr, te).size
    assert not np.array_equal(make_rng(1).permutation(150), make_rng(2).permutation(150))
    with pytest.raises(ConfigError):
        split(10, 1.0, make_rng(0))


def test_split_warns_on_missing_class(caplog):
    d = LabeledDataset(np.arange(5.0)[:, None], np.array([0, 0, 0, 0, 1]), ["a"], ["p", "q"])
    for seed in range(20):
        tr, _ = split_dataset(d, 0.2, seed)
        if 1 not in tr.y:
            assert "absent" in caplog.text
            return
    pytest.fail("no seed dropped the rare class")


def test_kfold_partitions():
    folds = kfold(11, 3, make_rng(0))
    vals = np.concatenate([va for _, va in folds])
    assert sorted(vals.tolist()) == list(range(11))
    for tr, va in folds:
        assert not np.intersect1d(tr, va).size
        assert tr.size + va.size == 11


def test_epsilon_rule():
    assert parse_epsilon_rule("psi/2")(0.1) == 0.05
    assert parse_epsilon_rule("psi*0.25")(0.4) == 0.1
    assert parse_epsilon_rule("psi")(0.3) == 0.3
    assert parse_epsilon_rule("0.01")(0.001) == 0.001
    for bad in ("psi/0.5", "half", "-1"):
        with pytest.raises(ConfigError):
            parse_epsilon_rule(bad)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(train_frac=1.2)
    with pytest.raises(ConfigError):
        ExperimentConfig(psi_grid=())
    with pytest.raises(ConfigError):
        ExperimentConfig(folds=1)
    with pytest.raises(ConfigError):
        ExperimentConfig(oracle="svd")
    g = write(tmp_path, json.dumps({"psi": [0.2], "C": [5]}), "g.json")
    cfg = ExperimentConfig().with_grid_file(g)
    assert cfg.psi_grid == (0.2,) and cfg.C_grid == (5.0,) and cfg.lam_grid == (0.0, 0.1, 1.0)
    with pytest.raises(ConfigError):
        ExperimentConfig().with_grid_file(write(tmp_path, '{"gamma": [1]}', "h.json"))


def test_cv_single_point_grid():
    X, y = two_circles(15, np.random.default_rng(0))
    cfg = ExperimentConfig(psi_grid=(0.01,), lam_grid=(0.1,), C_grid=(1.0,))
    res = cross_validate(X, y, cfg, make_rng(0))
    assert res.best == (0.01, 0.1, 1.0)
    assert len(res.table) == 1


def test_cv_picks_the_separating_psi():
    X, y = two_circles(30, np.random.default_rng(1))
    cfg = ExperimentConfig(psi_grid=(1.0, 1e-4), lam_grid=(0.0,), C_grid=(10.0,))
    res = cross_validate(X, y, cfg, make_rng(1))
    errs = {row["psi"]: row["error"] for row in res.table}
    assert errs[1e-4] == 0.0 and errs[1.0] > 0.0
    assert res.best[0] == 1e-4


def test_cv_tie_break():
    rows = [
        {"psi": 0.01, "lam": 0.0, "C": 1.0, "error": 0.0},
        {"psi": 0.05, "lam": 0.0, "C": 10.0, "error": 0.0},
        {"psi": 0.05, "lam": 0.0, "C": 1.0, "error": 0.0},
        {"psi": 0.1, "lam": 1.0, "C": 1.0, "error": 2.0},
    ]
    assert min(rows, key=_selection_key) == rows[2]
    X, y = two_circles(20, np.random.default_rng(2))
    cfg = ExperimentConfig(psi_grid=(1e-3, 5e-4), lam_grid=(0.0,), C_grid=(10.0,))
    res = cross_validate(X, y, cfg, make_rng(2))
    if res.table[0]["error"] == res.table[1]["error"]:
        assert res.best[0] == 1e-3


def test_cv_reports_total_failure(monkeypatch):
    import oavi.harness as h

    def boom(*a, **k):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(h, "fit_transformer", boom)
    X, y = two_circles(10, np.random.default_rng(0))
    with pytest.raises(NumericError, match="overflow"):
        cross_validate(X, y, ExperimentConfig(psi_grid=(0.1,), lam_grid=(0.0,), C_grid=(1.0,)), make_rng(0))


def small_config(**kw):
    base = dict(reps=1, psi_grid=(0.05, 0.005), lam_grid=(0.0, 0.1), C_grid=(1.0, 10.0), seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_experiment_deterministic(tmp_path):
    data = load_csv(IRIS)
    texts = [report_json(run_experiment(small_config(), data), timing=False) for _ in range(2)]
    assert texts[0] == texts[1]
    rep = json.loads(texts[0])
    assert "timing" not in rep
    assert rep["repetitions"][0]["train_size"] == 90
    assert rep["environment"]["rng"].startswith("numpy PCG64")


def test_two_circle_experiment_is_perfect():
    rng = np.random.default_rng(5)
    X, y = two_circles(40, rng)
    data = LabeledDataset(X, y, ["u", "v"], ["in", "out"])
    rep = run_experiment(small_config(psi_grid=(1e-3,), lam_grid=(0.0,), C_grid=(10.0,), reps=2), data)
    assert rep["mean"]["test_error"] == 0.0


def test_model_round_trip(tmp_path):
    data = load_csv(IRIS)
    model = OaviPipeline(OaviConfig(psi=0.01, lam=0.1), C=1.0).fit(data.X, data.y)
    path = tmp_path / "m.json"
    save_model(model, path, data.feature_names, data.label_names)
    loaded, names = load_model(path)
    assert names["variables"] == data.feature_names
    pts = np.random.default_rng(0).uniform(data.X.min(0) - 1, data.X.max(0) + 1, size=(100, 4))
    assert np.array_equal(loaded.transform(pts), model.transform(pts))
    assert np.array_equal(loaded.predict(pts), model.predict(pts))
    save_model(loaded, tmp_path / "again.json", data.feature_names, data.label_names)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_model_integrity_checks(tmp_path):
    X = np.random.default_rng(1).uniform(size=(20, 2))
    model = OaviPipeline(OaviConfig(psi=0.01), C=1.0).fit(X, np.repeat([0, 1], 10))
    d = model_to_dict(model)
    assert d["order"].startswith("deglex")
    for key, value in (("order", "lex"), ("version", 99), ("config_fingerprint", "0" * 64)):
        bad = dict(d, **{key: value})
        with pytest.raises(DataError):
            model_from_dict(bad)
    p = write(tmp_path, "{not json", "m.json")
    with pytest.raises(DataError):
        load_model(p)


# -- command line -----------------------------------------------------------


def test_cli_fit_evaluate_transform(tmp_path, capsys):
    model = tmp_path / "m.json"
    assert cli.main(["fit", "--data", IRIS, "--label-col", "species", "--psi", "0.01", "--model", str(model)]) == 0
    out = tmp_path / "metrics.json"
    assert cli.main(["evaluate", "--data", IRIS, "--model", str(model), "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())
    assert metrics["test_error"] < 10.0
    feats = tmp_path / "f.csv"
    assert cli.main(["transform", "--data", IRIS, "--model", str(model), "--out", str(feats)]) == 0
    lines = feats.read_text().splitlines()
    assert len(lines) == 151
    assert len(lines[0].split(",")) == metrics["n_generators"]


def test_cli_experiment(tmp_path):
    grid = write(tmp_path, json.dumps({"psi": [0.01], "lambda": [0.0], "C": [1.0]}), "g.json")
    out = tmp_path / "r.json"
    code = cli.main(["experiment", "--data", IRIS, "--grid-file", str(grid), "--reps", "2",
                     "--out", str(out), "--model", str(tmp_path / "m.json"), "--no-clamp"])
    assert code == 0
    rep = json.loads(out.read_text())
    assert len(rep["repetitions"]) == 2 and rep["config"]["clamp"] is False
    assert (tmp_path / "m.json").exists()


def test_cli_exit_codes(tmp_path):
    assert cli.main(["experiment", "--data", IRIS, "--train-frac", "1.5"]) == cli.EXIT_CONFIG
    assert cli.main(["fit", "--data", str(tmp_path / "none.csv")]) == cli.EXIT_DATA
    bad = write(tmp_path, "a,y\nx,1\n")
    assert cli.main(["fit", "--data", str(bad)]) == cli.EXIT_DATA
    with pytest.raises(SystemExit) as exc:
        cli.main(["fit", "--oracle", "svd", "--data", IRIS])
    assert exc.value.code == 2


def test_cli_numeric_failure(monkeypatch, tmp_path):
    import oavi.cli as c

    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(c.OaviPipeline, "fit", boom)
    assert c.main(["fit", "--data", IRIS, "--model", str(tmp_path / "m.json")]) == cli.EXIT_NUMERIC
