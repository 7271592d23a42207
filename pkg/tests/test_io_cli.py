import json

import numpy as np
import pytest
from conftest import make_dataset

from spglmm.cli import main
from spglmm.io import CsvSchema, InputError, dump_json, ingest_csv, read_config_file, to_jsonable, write_dataset_csv


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestIngest:
    def test_three_rows_two_groups(self, tmp_path):
        p = _write(tmp_path / "d.csv", "g,y,x\nb,1,0.5\na,0,1.5\nb,3,2.0\n")
        ing = ingest_csv(p, CsvSchema("g", "y", fixed=("x",)))
        d = ing.data
        assert d.group_labels == ["b", "a"] and list(d.sizes) == [2, 1]
        assert d.y.tolist() == [1, 3, 0] and d.X[:, 0].tolist() == [0.5, 2.0, 1.5]
        assert d.Z.tolist() == [[1], [1], [1]] and d.random_names == ["intercept"]
        assert (ing.n_rows, ing.n_dropped) == (3, 0)

    def test_missing_dropped(self, tmp_path):
        p = _write(tmp_path / "d.csv", "g,y,x\na,1,0.5\na,,1.5\nb,3,NA\nb,2,1\n")
        ing = ingest_csv(p, CsvSchema("g", "y", fixed=("x",)))
        assert (ing.n_rows, ing.n_dropped, ing.data.J) == (4, 2, 2)

    def test_missing_in_unused_column_kept(self, tmp_path):
        p = _write(tmp_path / "d.csv", "g,y,x,w\na,1,0.5,\nb,3,1,\n")
        assert ingest_csv(p, CsvSchema("g", "y", fixed=("x",))).n_dropped == 0

    def test_standardize(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.normal(5, 3, 40)
        rows = "\n".join(f"g{i % 4},{i % 3},{v!r}" for i, v in enumerate(x.tolist()))
        p = _write(tmp_path / "d.csv", "g,y,x\n" + rows + "\n")
        ing = ingest_csv(p, CsvSchema("g", "y", fixed=("x",), standardize=("x",)))
        col = ing.data.X[:, 0]
        assert abs(col.mean()) < 1e-12 and abs(col.std(ddof=1) - 1) < 1e-12
        assert ing.standardization["x"][0] == pytest.approx(x.mean())

    def test_random_slope_and_shared_column(self, tmp_path):
        p = _write(tmp_path / "d.csv", "g,y,z\na,1,0.5\nb,0,1\n")
        d = ingest_csv(p, CsvSchema("g", "y", fixed=("z",), random=("1", "z"))).data
        assert d.Z.tolist() == [[1, 0.5], [1, 1]] and d.X[:, 0].tolist() == [0.5, 1]

    def test_unknown_column(self, tmp_path):
        p = _write(tmp_path / "d.csv", "g,y\na,1\n")
        with pytest.raises(InputError, match="'x'"):
            ingest_csv(p, CsvSchema("g", "y", fixed=("x",)))

    def test_non_numeric(self, tmp_path):
        p = _write(tmp_path / "d.csv", "g,y\na,1\na,two\n")
        with pytest.raises(InputError, match="line 3"):
            ingest_csv(p, CsvSchema("g", "y"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            ingest_csv(tmp_path / "nope.csv", CsvSchema("g", "y"))

    def test_constant_standardize(self, tmp_path):
        p = _write(tmp_path / "d.csv", "g,y,x\na,1,2\nb,1,2\n")
        with pytest.raises(InputError, match="constant"):
            ingest_csv(p, CsvSchema("g", "y", fixed=("x",), standardize=("x",)))

    @pytest.mark.parametrize(
        "kw", [{"random": ()}, {"fixed": ("g",)}, {"fixed": ("x", "x")}, {"standardize": ("1",)}, {"standardize": ("q",)}]
    )
    def test_schema_errors(self, kw):
        with pytest.raises(InputError):
            CsvSchema("g", "y", **kw)

    def test_round_trip(self, tmp_path):
        d = make_dataset("poisson", [5, 7, 3], [1.0, 0.0, -1.0], seed=4)
        schema = write_dataset_csv(d, tmp_path / "d.csv")
        back = ingest_csv(tmp_path / "d.csv", schema).data
        for a in ("y", "X", "Z", "group"):
            np.testing.assert_array_equal(getattr(back, a), getattr(d, a))
        assert back.group_labels == [str(g) for g in d.group_labels]


def test_json_non_finite_and_numpy():
    out = to_jsonable({"a": np.float64(np.inf), "b": np.arange(2), "c": (np.bool_(True), np.nan)})
    assert out == {"a": None, "b": [0, 1], "c": [True, None]}


def test_json_float_round_trip(tmp_path):
    v = 0.1 + 0.2
    dump_json({"v": v}, tmp_path / "x.json")
    assert json.loads((tmp_path / "x.json").read_text())["v"] == v


def test_config_file(tmp_path):
    p = _write(tmp_path / "c.cfg", "# comment\nK = 40\n--itmax=7  # inline\n\n")
    assert read_config_file(p) == {"K": "40", "itmax": "7"}
    with pytest.raises(InputError):
        read_config_file(_write(tmp_path / "bad.cfg", "K 40\n"))


@pytest.fixture(scope="module")
def poisson_csv(tmp_path_factory):
    d = make_dataset("poisson", [40] * 6, [2.0, 2.0, 0.5, 0.5, -1.0, -1.0], seed=21)
    path = tmp_path_factory.mktemp("cli") / "data.csv"
    schema = write_dataset_csv(d, path)
    return path, schema


def _fit_args(path, schema, out, *extra):
    return ["fit", "--data", str(path), "--group", schema.group, "--response", schema.response,
            "--fixed", ",".join(schema.fixed), "--out", str(out), *extra]


class TestCli:
    def test_fit_outputs(self, poisson_csv, tmp_path):
        path, schema = poisson_csv
        assert main(_fit_args(path, schema, tmp_path / "r.json")) == 0
        res = json.loads((tmp_path / "r.json").read_text())
        assert res["m_hat"] == 3
        assert [s["point"][0] for s in res["support"]] == sorted(s["point"][0] for s in res["support"])
        assert res["beta"][0]["name"] == "x1" and res["beta"][0]["p_value"] < 1e-3
        clusters = [a["cluster"] for a in res["assignments"]]
        assert clusters == [3, 3, 2, 2, 1, 1]
        assert res["input"] == {"rows": 240, "dropped_rows": 0, "groups": 6}
        lines = (tmp_path / "r.json.groups.csv").read_text().splitlines()
        assert lines[0] == "group_id,group,cluster,W1,W2,W3" and len(lines) == 7

    def test_fit_byte_identical(self, poisson_csv, tmp_path):
        path, schema = poisson_csv
        for name in ("a", "b"):
            assert main(_fit_args(path, schema, tmp_path / f"{name}.json", "--seed", "3")) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.json.groups.csv").read_bytes() == (tmp_path / "b.json.groups.csv").read_bytes()

    def test_alpha_and_t_exclusive(self, poisson_csv, tmp_path, capsys):
        path, schema = poisson_csv
        with pytest.raises(SystemExit) as exc:
            main(_fit_args(path, schema, tmp_path / "r.json", "--alpha", "0.05", "--t", "0.5"))
        assert exc.value.code == 1

    def test_missing_response_column(self, poisson_csv, tmp_path, capsys):
        path, schema = poisson_csv
        args = _fit_args(path, schema, tmp_path / "r.json")
        args[args.index("--response") + 1] = "count"
        assert main(args) == 1
        assert "'count'" in capsys.readouterr().err

    def test_bernoulli_family_rejects_counts(self, poisson_csv, tmp_path):
        path, schema = poisson_csv
        assert main(_fit_args(path, schema, tmp_path / "r.json", "--family", "bernoulli")) == 1

    def test_config_overridden_by_flag(self, poisson_csv, tmp_path):
        path, schema = poisson_csv
        cfg = _write(tmp_path / "c.cfg", "K = 3\nK1 = 2\nK2 = 1\nitmax = 4\n")
        assert main(_fit_args(path, schema, tmp_path / "r.json", "--config", str(cfg), "--itmax", "6", "--no-inference")) in (0, 2)
        conf = json.loads((tmp_path / "r.json").read_text())["config"]
        assert (conf["K"], conf["K1"], conf["itmax"]) == (3, 2, 6)

    def test_config_file_bad_value(self, poisson_csv, tmp_path):
        path, schema = poisson_csv
        cfg = _write(tmp_path / "c.cfg", "K = many\n")
        assert main(_fit_args(path, schema, tmp_path / "r.json", "--config", str(cfg))) == 1

    def test_non_convergence_exit_code(self, poisson_csv, tmp_path):
        path, schema = poisson_csv
        code = main(_fit_args(path, schema, tmp_path / "r.json", "--K", "2", "--K1", "2", "--K2", "1", "--no-inference"))
        res = json.loads((tmp_path / "r.json").read_text())
        assert code == (0 if res["converged"]["conv1"] and res["converged"]["conv2"] else 2)

    def test_invalid_variant(self, tmp_path):
        assert main(["simulate", "--variant", "gamma", "--out", str(tmp_path / "s.json")]) == 1

    def test_simulate_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.json"
            args = ["simulate", "--variant", "poisson-intercept", "--runs", "2", "--t", "0.5,1.0", "--seed", "4",
                    "--out", str(out), "--data-out", str(tmp_path / f"{name}.data.csv")]
            assert main(args) == 0
            outs.append(out)
        assert outs[0].read_bytes() == outs[1].read_bytes()
        assert (tmp_path / "a.json.csv").read_bytes() == (tmp_path / "b.json.csv").read_bytes()
        rep = json.loads(outs[0].read_text())
        assert [s["config"] for s in rep["summary"]] == ["t=0.5", "t=1.0"]
        assert len(rep["replicates"]) == 4

    def test_scan_descending_grid(self, poisson_csv, tmp_path, caplog):
        path, schema = poisson_csv
        args = ["scan", "--data", str(path), "--group", "group", "--response", "y", "--fixed", "x1",
                "--t", "1.0,0.25,0.5", "--out", str(tmp_path / "s.csv")]
        assert main(args) == 0
        assert "sorted" in caplog.text
        rows = (tmp_path / "s.csv").read_text().splitlines()
        assert rows[0] == "replicate,t,entropy,m_hat,converged,error"
        assert [r.split(",")[1] for r in rows[1:]] == ["0.25", "0.5", "1.0"]

    def test_scan_requires_t(self, tmp_path):
        assert main(["scan", "--variant", "poisson-intercept", "--out", str(tmp_path / "s.csv")]) == 1
        assert main(["scan", "--variant", "poisson-intercept", "--alpha", "0.05", "--out", str(tmp_path / "s.csv")]) == 1


def test_scan_single_t(poisson_csv, tmp_path):
    path, _ = poisson_csv
    out = tmp_path / "s.csv"
    assert main(["scan", "--data", str(path), "--group", "group", "--response", "y", "--fixed", "x1",
                 "--t", "0.5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 and lines[1].split(",")[3] == "3"
