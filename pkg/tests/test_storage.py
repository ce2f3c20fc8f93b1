import json
import os

import numpy as np
import pytest

from dplsvm.errors import InputFileError, MalformedMatrixError, ValidationError
from dplsvm.features import EdgeFeatureTable, Standardization, edge_descriptors
from dplsvm.netestim import SubjectScan
from dplsvm.rngkit import RandomStream
from dplsvm.storage import (
    check_same_subjects,
    companion_files,
    is_dynamic_table,
    manifest_covariate_names,
    manifest_series_paths,
    read_draws,
    read_dynamic_features,
    read_json,
    read_manifest,
    read_matrix,
    read_subject_ids,
    read_table,
    write_draws,
    write_dynamic_features,
    write_error_record,
    write_manifest,
    write_matrix,
    write_run_manifest,
    write_subject_ids,
    write_table,
)
from dplsvm.svm_dynamic import fit_dynamic
from dplsvm.svm_static import Hyperparameters, fit_static
from dplsvm.synthgen import SynthSpec, generate_dynamic
from dplsvm.utils import sha256_file


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)
    return str(path)


def test_read_matrix_delimiters(tmp_path):
    m = read_matrix(_write(tmp_path / "a.txt", "1,2,3\n4\t5\t6\n\n7 8  9\n"))
    assert m.tolist() == [[1, 2, 3], [4, 5, 6], [7, 8, 9]]


def test_read_matrix_header(tmp_path):
    path = _write(tmp_path / "b.csv", "0-1,1-2\n1.5,-2e-3\n")
    m, header = read_matrix(path, with_header=True)
    assert header == ["0-1", "1-2"]
    assert m.tolist() == [[1.5, -0.002]]
    assert read_matrix(path).shape == (1, 2)


def test_read_matrix_errors(tmp_path):
    with pytest.raises(InputFileError):
        read_matrix(str(tmp_path / "missing.csv"))
    with pytest.raises(MalformedMatrixError):
        read_matrix(_write(tmp_path / "ragged.csv", "1,2\n3\n"))
    with pytest.raises(MalformedMatrixError):
        read_matrix(_write(tmp_path / "text.csv", "1,2\n3,x\n"))
    with pytest.raises(MalformedMatrixError):
        read_matrix(_write(tmp_path / "empty.csv", "a,b\n"))


def test_write_matrix_is_exact(tmp_path):
    m = RandomStream(0).normal(size=(4, 3))
    path = str(tmp_path / "sub" / "m.csv")
    write_matrix(path, m)
    assert np.array_equal(read_matrix(path), m)


def _table():
    stream = RandomStream(1)
    values = stream.normal(size=(6, 3))
    return EdgeFeatureTable(
        values=values,
        columns=edge_descriptors(3),
        covariates=stream.normal(size=(6, 1)),
        labels=np.array([1.0, -1.0, 1.0, -1.0, np.nan, 1.0]),
        subject_ids=[f"s{i}" for i in range(6)],
        covariate_names=["age"],
        standardization=Standardization(np.array([0.5, 0.0, -1.0]), np.array([1.0, 2.0, 3.0])),
    )


def test_table_round_trip(tmp_path):
    table = _table()
    path = str(tmp_path / "table.csv")
    write_table(path, table)
    back = read_table(path)

    assert np.array_equal(back.values, table.values)
    assert np.array_equal(back.covariates, table.covariates)
    assert np.array_equal(back.labels, table.labels, equal_nan=True)
    assert back.columns == table.columns
    assert back.subject_ids == table.subject_ids
    assert back.covariate_names == ["age"]
    assert back.standardization.scale.tolist() == [1.0, 2.0, 3.0]

    assert not is_dynamic_table(path)
    assert companion_files(path) == [path, str(tmp_path / "table.json")]


def test_table_column_mismatch(tmp_path):
    path = str(tmp_path / "table.csv")
    write_table(path, _table())
    write_matrix(path, np.zeros((6, 2)))
    with pytest.raises(MalformedMatrixError):
        read_table(path)


def test_manifest_round_trip(tmp_path):
    stream = RandomStream(2)
    scans = [
        SubjectScan("a", stream.normal(size=(10, 3)), [30.0, 1.0], 1),
        SubjectScan("b", stream.normal(size=(10, 3)), [41.0, 0.0], -1),
        SubjectScan("c", stream.normal(size=(10, 3)), [25.0, 1.0], None),
    ]
    path = str(tmp_path / "data" / "subjects.csv")
    write_manifest(path, scans, ["age", "sex"])

    back = read_manifest(path)
    assert [s.id for s in back] == ["a", "b", "c"]
    assert [s.label for s in back] == [1, -1, None]
    assert np.array_equal(back[1].series, scans[1].series)
    assert back[0].covariates.tolist() == [30.0, 1.0]
    assert manifest_covariate_names(path) == ["age", "sex"]
    assert manifest_series_paths(path)[2] == os.path.join(str(tmp_path / "data"), "series", "c.csv")


def test_manifest_errors(tmp_path):
    with pytest.raises(InputFileError):
        read_manifest(str(tmp_path / "nope.csv"))
    with pytest.raises(MalformedMatrixError):
        read_manifest(_write(tmp_path / "bad.csv", "subject,file\nx,y\n"))

    write_matrix(str(tmp_path / "s.csv"), RandomStream(3).normal(size=(5, 2)))
    with pytest.raises(MalformedMatrixError):
        read_manifest(_write(tmp_path / "m.csv", "id,series,label,age\nx,s.csv,1,old\n"))
    with pytest.raises(InputFileError):
        read_manifest(_write(tmp_path / "m2.csv", "id,series,label\nx,gone.csv,1\n"))


def test_dynamic_features_round_trip(tmp_path):
    data = generate_dynamic(SynthSpec(n=12, q=3, c=1, n_signals=1, seed=1), r=2, length=10)
    path = str(tmp_path / "dyn.csv")
    stats = [Standardization(np.zeros(3), np.ones(3))] * 2
    write_dynamic_features(path, data.features, data.covariates, data.labels, ["age"], stats)

    assert is_dynamic_table(path)
    back = read_dynamic_features(path)
    assert back.features.r == 2
    assert back.features.method == data.features.method
    for a, b in zip(back.features.tables, data.features.tables):
        assert np.array_equal(a, b)
    assert np.array_equal(back.covariates, data.covariates)
    assert np.array_equal(back.labels, data.labels)
    assert back.covariate_names == ["age"]
    assert len(back.standardization) == 2

    files = companion_files(path)
    assert str(tmp_path / "dyn.r0.csv") in files
    assert str(tmp_path / "dyn.r1.csv") in files
    assert str(tmp_path / "dyn.covariates.csv") in files


def test_dynamic_features_without_covariates(tmp_path):
    data = generate_dynamic(SynthSpec(n=12, q=3, n_signals=1, seed=2), r=1, length=10)
    path = str(tmp_path / "dyn.csv")
    write_dynamic_features(path, data.features, np.zeros((12, 0)), data.labels)
    back = read_dynamic_features(path)
    assert back.covariates.shape == (12, 0)
    assert back.standardization is None


def test_static_draws_round_trip(tmp_path, separable_table):
    hyper = Hyperparameters(n_iter=40, burn_in=20, thin=2, n_chains=2, log_every=0)
    draws = fit_static(separable_table, hyper)
    path = str(tmp_path / "draws.jsonl")
    write_draws(path, draws)
    back = read_draws(path)

    assert back.model == "static"
    assert np.array_equal(back.coefficients, draws.coefficients)
    assert np.array_equal(back.sigma_eps2, draws.sigma_eps2)
    assert np.array_equal(back.n_clusters, draws.n_clusters)
    assert np.array_equal(back.iterations, draws.iterations)
    assert back.atoms == draws.atoms
    assert back.coefficient_names == draws.coefficient_names
    assert back.hyper == hyper

    with open(path) as f:
        lines = f.read().splitlines()
    assert len(lines) == 1 + 2 * 10
    assert json.loads(lines[1])["chain"] == 0


def test_dynamic_draws_round_trip(tmp_path):
    data = generate_dynamic(SynthSpec(n=20, q=3, c=1, n_signals=1, seed=3), r=2, length=10)
    hyper = Hyperparameters(n_iter=20, burn_in=10, thin=1, n_chains=1, log_every=0)
    draws = fit_dynamic(data.features, data.covariates, data.labels, hyper, ["age"])
    path = str(tmp_path / "draws.jsonl")
    write_draws(path, draws)
    back = read_draws(path)

    assert back.model == "dynamic"
    assert np.allclose(back.coefficients, draws.coefficients)
    for name in ("beta", "gamma", "eta", "sigma_eta", "d_star"):
        assert np.array_equal(back.extras[name], draws.extras[name]), name


def test_read_draws_errors(tmp_path):
    with pytest.raises(MalformedMatrixError):
        read_draws(_write(tmp_path / "a.jsonl", '{"iteration": 1}\n'))
    with pytest.raises(MalformedMatrixError):
        read_draws(_write(tmp_path / "b.jsonl", "not json\n"))
    header = {"kind": "header", "model": "static", "coefficient_names": [], "n_chains": 1, "n_draws": 2}
    with pytest.raises(MalformedMatrixError):
        read_draws(_write(tmp_path / "c.jsonl", json.dumps(header) + "\n"))


def test_run_manifest(tmp_path):
    source = _write(tmp_path / "in.csv", "1,2\n")
    out = str(tmp_path / "run")
    manifest = write_run_manifest(out, "fit-static", [source], 7, "SEED=7\n")

    assert manifest["inputs"] == {os.path.abspath(source): sha256_file(source)}
    assert manifest["seed"] == 7
    with open(os.path.join(out, "config.env")) as f:
        assert f.read() == "SEED=7\n"
    with open(os.path.join(out, "manifest.json")) as f:
        assert json.load(f)["subcommand"] == "fit-static"

    with pytest.raises(InputFileError):
        write_run_manifest(out, "fit-static", [str(tmp_path / "gone.csv")], 7, "")


def test_run_manifest_repeats_byte_for_byte(tmp_path):
    source = _write(tmp_path / "in.csv", "1,2\n")
    contents = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        write_run_manifest(out, "fit-static", [source], 7, "SEED=7\n")
        with open(os.path.join(out, "manifest.json"), "rb") as f:
            contents.append(f.read())
        run = read_json(os.path.join(out, "run.json"))
        assert run["manifest_sha256"] == sha256_file(os.path.join(out, "manifest.json"))
        assert "created_at" in run
    assert contents[0] == contents[1]
    assert b"created_at" not in contents[0]


def test_error_record(tmp_path):
    record = write_error_record(str(tmp_path), ValidationError("bad"), 5)
    assert record == {"error": "ValidationError", "code": 5, "message": "bad"}
    with open(tmp_path / "error.json") as f:
        assert json.load(f)["code"] == 5

    assert write_error_record(None, ValidationError("bad"), 5)["code"] == 5


def test_check_same_subjects():
    check_same_subjects(["a", "b"], ("a", "b"))
    with pytest.raises(ValidationError):
        check_same_subjects(["a", "b"], ["b", "a"])


def test_subject_ids_file(tmp_path):
    path = str(tmp_path / "ids" / "train_ids.txt")
    write_subject_ids(path, ["s1", "s0"])
    assert read_subject_ids(path) == ["s1", "s0"]

    with open(path, "a") as f:
        f.write("\n# held back\n  s3  \n")
    assert read_subject_ids(path) == ["s1", "s0", "s3"]

    dup = tmp_path / "dup.txt"
    dup.write_text("s0\ns1\ns0\n")
    with pytest.raises(ValidationError):
        read_subject_ids(str(dup))

    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n\n")
    with pytest.raises(ValidationError):
        read_subject_ids(str(empty))

    with pytest.raises(InputFileError):
        read_subject_ids(str(tmp_path / "missing.txt"))
