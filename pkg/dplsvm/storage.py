"""Files read and written by the pipeline: delimited matrices, the subject
manifest, JSON sidecars, JSON-lines posterior draws and run manifests."""
import csv
import json
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import arrow
import numpy as np

from dplsvm.config import VERSION
from dplsvm.errors import InputFileError, MalformedMatrixError, ValidationError
from dplsvm.features import DynamicFeatureSet, EdgeDescriptor, EdgeFeatureTable, Standardization
from dplsvm.log import LOG
from dplsvm.netestim import SubjectScan
from dplsvm.svm_static import Hyperparameters, PosteriorDraws
from dplsvm.utils import sha256_file

_SPLIT = re.compile(r"[,\t ]+")


def _ensure_dir(path: str):
    file_dir = os.path.dirname(path)
    if file_dir:
        os.makedirs(file_dir, exist_ok=True)


def require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise InputFileError(f"input file {path} does not exist")
    return path


def _parse_row(line: str) -> List[float]:
    return [float(x) for x in _SPLIT.split(line.strip()) if x != ""]


def read_matrix(path: str, with_header: bool = False):
    """Comma, tab or whitespace separated numbers; a first row that does not
    parse as numbers is taken as a header."""
    require_file(path)
    with open(path) as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    header = None
    if lines:
        try:
            _parse_row(lines[0])
        except ValueError:
            header = [h.strip() for h in _SPLIT.split(lines[0].strip()) if h.strip()]
            lines = lines[1:]
    rows = []
    for i, line in enumerate(lines):
        try:
            rows.append(_parse_row(line))
        except ValueError:
            raise MalformedMatrixError(f"{path}: row {i + 1} has a non-numeric entry")
    if not rows:
        raise MalformedMatrixError(f"{path}: no numeric rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise MalformedMatrixError(f"{path}: ragged rows with widths {sorted(widths)}")
    m = np.array(rows, dtype=float)
    if with_header:
        return m, header
    return m


def write_matrix(path: str, m, header: Optional[Sequence[str]] = None):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    _ensure_dir(path)
    with open(path, "w") as f:
        if header:
            f.write(",".join(header) + "\n")
        for row in m:
            f.write(",".join(f"{x:.17g}" for x in row) + "\n")


def write_json(path: str, obj):
    _ensure_dir(path)
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path: str):
    require_file(path)
    with open(path) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise MalformedMatrixError(f"{path}: invalid JSON: {e}")


def read_subject_ids(path: str) -> List[str]:
    """One subject id per line; blank lines and # comments are skipped."""
    require_file(path)
    with open(path) as f:
        ids = [line.strip() for line in f]
    ids = [i for i in ids if i and not i.startswith("#")]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate subject ids")
    if not ids:
        raise ValidationError(f"{path}: no subject ids")
    return ids


def write_subject_ids(path: str, ids: Sequence[str]):
    _ensure_dir(path)
    with open(path, "w") as f:
        f.writelines(f"{i}\n" for i in ids)


# subject manifest: id,series,label,<covariates...>


def read_manifest(path: str) -> List[SubjectScan]:
    require_file(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        fields = reader.fieldnames or []
        if fields[:3] != ["id", "series", "label"]:
            raise MalformedMatrixError(f"{path}: header must start with id,series,label")
        covariate_names = fields[3:]
        scans = []
        for row in reader:
            series_path = row["series"]
            if not os.path.isabs(series_path):
                series_path = os.path.join(base, series_path)
            label = row["label"].strip()
            try:
                covariates = [float(row[c]) for c in covariate_names]
                label = int(float(label)) if label else None
            except ValueError:
                raise MalformedMatrixError(f"{path}: subject {row['id']} has a non-numeric field")
            scans.append(
                SubjectScan(
                    id=row["id"],
                    series=read_matrix(series_path),
                    covariates=np.array(covariates),
                    label=label,
                )
            )
    if not scans:
        raise MalformedMatrixError(f"{path}: no subjects")
    LOG.d("read %s subjects from %s", len(scans), path)
    return scans


def manifest_covariate_names(path: str) -> List[str]:
    with open(require_file(path), newline="") as f:
        return next(csv.reader(f))[3:]


def manifest_series_paths(path: str) -> List[str]:
    base = os.path.dirname(os.path.abspath(path))
    with open(require_file(path), newline="") as f:
        return [
            row["series"] if os.path.isabs(row["series"]) else os.path.join(base, row["series"])
            for row in csv.DictReader(f)
        ]


def write_manifest(path: str, scans: Sequence[SubjectScan], covariate_names=None):
    """Series go to series/<id>.csv beside the manifest."""
    base = os.path.dirname(os.path.abspath(path))
    n_cov = len(scans[0].covariates) if scans else 0
    covariate_names = list(covariate_names or [f"c{j}" for j in range(n_cov)])
    _ensure_dir(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "series", "label"] + covariate_names)
        for scan in scans:
            rel = os.path.join("series", f"{scan.id}.csv")
            write_matrix(os.path.join(base, rel), scan.series)
            label = "" if scan.label is None else str(int(scan.label))
            writer.writerow([scan.id, rel, label] + [f"{x:.17g}" for x in scan.covariates])


# edge feature tables: <name>.csv (values then covariates) + <name>.json


def write_table(path: str, table: EdgeFeatureTable):
    write_matrix(path, table.design(), header=table.coefficient_names())
    sidecar = {
        "columns": [c.to_dict() for c in table.columns],
        "covariate_names": table.covariate_names,
        "subject_ids": table.subject_ids,
        "labels": table.labels.tolist(),
        "standardization": table.standardization.to_dict() if table.standardization else None,
    }
    write_json(_sidecar(path), sidecar)


def read_table(path: str) -> EdgeFeatureTable:
    design = read_matrix(path)
    meta = read_json(_sidecar(path))
    columns = [EdgeDescriptor(**c) for c in meta["columns"]]
    q = len(columns)
    if design.shape[1] != q + len(meta["covariate_names"]):
        raise MalformedMatrixError(f"{path}: column count does not match its sidecar")
    std = meta.get("standardization")
    return EdgeFeatureTable(
        values=design[:, :q],
        columns=columns,
        covariates=design[:, q:],
        labels=np.array(meta["labels"], dtype=float),
        subject_ids=meta["subject_ids"],
        covariate_names=meta["covariate_names"],
        standardization=Standardization(np.array(std["mean"]), np.array(std["scale"])) if std else None,
    )


def write_dynamic_features(
    path: str, features: DynamicFeatureSet, covariates, labels, covariate_names=None, standardization=None
):
    """One matrix per extracted feature: <stem>.r<k>.csv, plus the sidecar."""
    stem = os.path.splitext(path)[0]
    for k, t in enumerate(features.tables):
        write_matrix(f"{stem}.r{k}.csv", t, header=[c.name() for c in features.columns])
    covariates = np.asarray(covariates, dtype=float).reshape(features.n, -1)
    write_matrix(f"{stem}.covariates.csv", covariates if covariates.size else np.zeros((features.n, 0)))
    write_json(
        _sidecar(path),
        {
            "method": features.method,
            "R": features.r,
            "columns": [c.to_dict() for c in features.columns],
            "subject_ids": features.subject_ids,
            "labels": np.asarray(labels, dtype=float).tolist(),
            "covariate_names": list(covariate_names or [f"c{j}" for j in range(covariates.shape[1])]),
            "components": None if features.components is None else features.components.tolist(),
            "standardization": [s.to_dict() for s in standardization] if standardization else None,
        },
    )


@dataclass
class DynamicInputs:
    features: DynamicFeatureSet
    covariates: np.ndarray
    labels: np.ndarray
    covariate_names: List[str]
    standardization: Optional[List[Standardization]] = None


def read_dynamic_features(path: str) -> DynamicInputs:
    meta = read_json(_sidecar(path))
    stem = os.path.splitext(path)[0]
    tables = [read_matrix(f"{stem}.r{k}.csv") for k in range(meta["R"])]
    n = len(meta["subject_ids"])
    if meta["covariate_names"]:
        covariates = read_matrix(f"{stem}.covariates.csv")
    else:
        covariates = np.zeros((n, 0))
    features = DynamicFeatureSet(
        method=meta["method"],
        tables=tables,
        columns=[EdgeDescriptor(**c) for c in meta["columns"]],
        subject_ids=meta["subject_ids"],
        components=None if meta["components"] is None else np.array(meta["components"]),
    )
    stats = meta.get("standardization")
    return DynamicInputs(
        features=features,
        covariates=covariates,
        labels=np.array(meta["labels"], dtype=float),
        covariate_names=meta["covariate_names"],
        standardization=[Standardization(np.array(s["mean"]), np.array(s["scale"])) for s in stats]
        if stats
        else None,
    )


def _sidecar(path: str) -> str:
    return os.path.splitext(path)[0] + ".json"


def is_dynamic_table(path: str) -> bool:
    """Dynamic feature sets carry their feature count R in the sidecar."""
    return "R" in read_json(_sidecar(path))


def companion_files(path: str) -> List[str]:
    """The table file and everything written beside it, for run manifests."""
    stem = os.path.splitext(path)[0]
    candidates = [path, _sidecar(path), f"{stem}.covariates.csv"]
    k = 0
    while os.path.isfile(f"{stem}.r{k}.csv"):
        candidates.append(f"{stem}.r{k}.csv")
        k += 1
    return [p for p in candidates if os.path.isfile(p)]


# posterior draws: a header line, then one JSON record per draw


def write_draws(path: str, draws: PosteriorDraws):
    _ensure_dir(path)
    header = {
        "kind": "header",
        "model": draws.model,
        "coefficient_names": draws.coefficient_names,
        "shape": draws.shape,
        "hyper": draws.hyper.to_dict() if draws.hyper else None,
        "n_chains": draws.n_chains,
        "n_draws": draws.n_draws,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for chain in range(draws.n_chains):
            for j, it in enumerate(draws.iterations):
                record = {
                    "iteration": int(it),
                    "chain": chain,
                    "sigma_eps2": float(draws.sigma_eps2[chain, j]),
                    "delta": int(draws.n_clusters[chain, j]),
                    "atoms": draws.atoms[chain][j],
                    "lambda": draws.lambda_[chain, j].tolist(),
                }
                if draws.model == "dynamic":
                    for name in ("beta", "gamma", "eta", "sigma_eta"):
                        record[name] = draws.extras[name][chain, j].tolist()
                    record["d_star"] = float(draws.extras["d_star"][chain, j])
                else:
                    record["beta"] = draws.coefficients[chain, j].tolist()
                f.write(json.dumps(record, sort_keys=True) + "\n")
    LOG.d("wrote %s draws to %s", draws.n_chains * draws.n_draws, path)


def read_draws(path: str) -> PosteriorDraws:
    require_file(path)
    with open(path) as f:
        try:
            lines = [json.loads(line) for line in f if line.strip()]
        except json.JSONDecodeError as e:
            raise MalformedMatrixError(f"{path}: invalid draw record: {e}")
    if not lines or lines[0].get("kind") != "header":
        raise MalformedMatrixError(f"{path}: missing header record")
    header, records = lines[0], lines[1:]
    n_chains, n_draws = header["n_chains"], header["n_draws"]
    if len(records) != n_chains * n_draws:
        raise MalformedMatrixError(f"{path}: expected {n_chains * n_draws} draws, found {len(records)}")
    dynamic = header["model"] == "dynamic"

    def field(name, dtype=float):
        values = np.array([rec[name] for rec in records], dtype=dtype)
        return values.reshape((n_chains, n_draws) + values.shape[1:])

    if dynamic:
        extras = {name: field(name) for name in ("beta", "gamma", "eta", "sigma_eta", "d_star")}
        coefficients = np.array(
            [
                np.concatenate([np.outer(rec["eta"], rec["beta"]).ravel(), rec["gamma"]])
                for rec in records
            ]
        ).reshape(n_chains, n_draws, -1)
    else:
        extras = {}
        coefficients = field("beta")
    return PosteriorDraws(
        model=header["model"],
        coefficients=coefficients,
        sigma_eps2=field("sigma_eps2"),
        n_clusters=field("delta", int),
        lambda_=field("lambda"),
        atoms=[[rec["atoms"] for rec in records[c * n_draws : (c + 1) * n_draws]] for c in range(n_chains)],
        iterations=np.array([rec["iteration"] for rec in records[:n_draws]]),
        coefficient_names=header["coefficient_names"],
        hyper=Hyperparameters(**header["hyper"]) if header.get("hyper") else None,
        extras=extras,
        shape=header.get("shape", {}),
    )


def write_run_manifest(
    out_dir: str, subcommand: str, inputs: Sequence[str], seed: int, config_lines: str
) -> Dict:
    """manifest.json and config.env beside the outputs of one run.

    manifest.json holds only what identifies the run, so repeating it gives
    the same bytes; the wall-clock time goes to run.json.
    """
    for path in inputs:
        require_file(path)
    manifest = {
        "subcommand": subcommand,
        "inputs": {os.path.abspath(p): sha256_file(p) for p in inputs},
        "seed": seed,
        "version": VERSION,
        "config": config_lines.splitlines(),
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.env"), "w") as f:
        f.write(config_lines)
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_json(manifest_path, manifest)
    write_json(
        os.path.join(out_dir, "run.json"),
        {"created_at": arrow.utcnow().isoformat(), "manifest_sha256": sha256_file(manifest_path)},
    )
    return manifest


def write_error_record(out_dir: Optional[str], error: Exception, code: int) -> Dict:
    record = {"error": type(error).__name__, "code": code, "message": str(error)}
    if out_dir and os.path.isdir(out_dir):
        write_json(os.path.join(out_dir, "error.json"), record)
    return record


def check_same_subjects(ids_a: Sequence[str], ids_b: Sequence[str]):
    if list(ids_a) != list(ids_b):
        raise ValidationError("the two sessions must list the same subjects in the same order")
