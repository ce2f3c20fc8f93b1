"""Command line entry point.

    python cli.py <subcommand> --out DIR [--config FILE] [--set key=value ...]

Every run writes its outputs, manifest.json and the resolved config.env into
DIR. On failure a JSON error record goes to stderr (and DIR/error.json) and
the exit status is the error's code.
"""
import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np
import sentry_sdk

from dplsvm import storage
from dplsvm.config import LOG_LEVELS, SENTRY_DSN, VERSION, RunConfig, load_run_config, parse_overrides
from dplsvm.diagnostics import (
    conditional_oracles,
    expected_cluster_count,
    geweke_dynamic,
    geweke_static,
    prior_chain_cluster_count,
    split_rhat,
    stick_breaking_check,
)
from dplsvm.errors import DPLSVMError, ValidationError
from dplsvm.eval_infer import (
    credible_select,
    metrics,
    reproducible_features,
    select_by_validation,
    stratified_splits,
)
from dplsvm.features import (
    EdgeFeatureTable,
    assemble_design,
    edge_descriptors,
    extract_dynamic_features,
    multisession_union,
    screen_dynamic,
    screen_edges,
    stack_edge_vectors,
    standardize_dynamic,
)
from dplsvm.log import LOG, set_level
from dplsvm.netestim import fit_networks, sliding_window
from dplsvm.svm_dynamic import dynamic_design, fit_dynamic
from dplsvm.svm_static import PRIOR_MODES, PosteriorDraws, fit_static, predict
from dplsvm.synthgen import SynthSpec, generate, generate_dynamic, generate_scans, recovery_study

INTERCEPT = "intercept"

# limits the acceptance checks are held to
GEWEKE_LIMIT = 4.0
ORACLE_TV = 0.02
PRIOR_TOLERANCE = 0.05
STICKS_P = 0.001
RECOVERY_EXCESS = 0.05
RECOVERY_SIGNALS = 8
RECOVERY_FALSE = 2


def _out(args, name: str) -> str:
    return os.path.join(args.out, name)


def _labels(scans) -> np.ndarray:
    return np.array([np.nan if s.label is None else float(s.label) for s in scans])


def _covariates(scans) -> np.ndarray:
    return np.vstack([s.covariates for s in scans]) if scans else np.zeros((0, 0))


def _holdout(labels, fraction: float, seed: int):
    """seeded stratified (kept rows, held-out rows), both sorted"""
    [(kept, held)] = stratified_splits(labels, 1, 1.0 - fraction, seed)
    return np.sort(kept), np.sort(held)


def _with_intercept(covariates, names):
    covariates = np.asarray(covariates, dtype=float)
    ones = np.ones((covariates.shape[0], 1))
    return np.hstack([covariates, ones]), list(names) + [INTERCEPT]


def _fits_intercept(draws: PosteriorDraws) -> bool:
    return bool(draws.coefficient_names) and draws.coefficient_names[-1] == INTERCEPT


# network estimation


def _edge_table(scans, density: float, cfg: RunConfig, covariate_names):
    """(raw edge table, per-subject networks)"""
    networks = fit_networks(
        scans,
        density,
        tol=cfg.glasso_tol,
        max_iter=cfg.glasso_max_iter,
        threads=cfg.threads,
        n_lambda=cfg.lambda_grid_size,
    )
    values, columns = stack_edge_vectors([n.edge_weights(cfg.edge_weight) for n in networks])
    return (
        EdgeFeatureTable(
            values=values,
            columns=columns,
            covariates=_covariates(scans),
            labels=_labels(scans),
            subject_ids=[s.id for s in scans],
            covariate_names=list(covariate_names),
        ),
        networks,
    )


def _window_features(scans, window: int, cfg: RunConfig, fit_rows=None):
    lengths = {s.series.shape for s in scans}
    if len(lengths) != 1:
        raise ValidationError("sliding-window features need every subject to share T and V")
    series = np.stack([sliding_window(s.series, window).edge_series() for s in scans])
    columns = edge_descriptors(scans[0].n_regions)
    return extract_dynamic_features(
        series, columns, cfg.feature_method, cfg.variance_target, [s.id for s in scans], fit_rows
    )


def _score_static(table: EdgeFeatureTable, cfg: RunConfig, train, val):
    keep = screen_edges(table.values[train], cfg.sd_threshold)
    design = assemble_design(
        table.values[:, keep],
        [table.columns[j] for j in keep],
        table.covariates,
        table.labels,
        table.subject_ids,
        table.covariate_names,
        standardize=cfg.standardize,
        train_rows=train,
    )
    if cfg.intercept:
        design = design.with_intercept()
    draws = fit_static(design.subset(train), cfg.hyperparameters())
    prediction = predict(draws, design.subset(val).design())
    return metrics(design.labels[val], prediction.labels)


def _score_dynamic(features, covariates, labels, covariate_names, cfg: RunConfig, train, val):
    features = features.select_columns(screen_dynamic(features, cfg.sd_threshold, train))
    fit_set, fit_cov = features.subset(train), covariates[train]
    val_set, val_cov = features.subset(val), covariates[val]
    if cfg.standardize:
        fit_set, fit_cov, stats = standardize_dynamic(fit_set, fit_cov)
        val_set, val_cov, _ = standardize_dynamic(val_set, val_cov, stats)
    names = list(covariate_names)
    if cfg.intercept:
        fit_cov, names = _with_intercept(fit_cov, covariate_names)
        val_cov, _ = _with_intercept(val_cov, covariate_names)
    draws = fit_dynamic(fit_set, fit_cov, labels[train], cfg.hyperparameters(), names)
    prediction = predict(draws, dynamic_design(val_set, val_cov))
    return metrics(labels[val], prediction.labels)


def _write_selection(args, cfg: RunConfig, selection, kind: str):
    storage.write_json(
        _out(args, "selection.json"),
        {
            "setting": kind,
            "chosen": selection.chosen,
            "reports": {str(s): r.to_dict() for s, r in selection.reports.items()},
            "failures": {str(s): e for s, e in selection.failures.items()},
        },
    )
    if cfg.plot_data:
        with open(_out(args, "validation_curve.csv"), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["setting", "mc", "f1", "informedness"])
            writer.writeheader()
            writer.writerows(selection.curve())


def cmd_networks(args, cfg: RunConfig):
    scans = storage.read_manifest(args.manifest)
    covariate_names = storage.manifest_covariate_names(args.manifest)
    labels = _labels(scans)

    if args.dynamic:
        window = cfg.window
        if args.select:
            covariates = _covariates(scans)
            train, val = _holdout(labels, cfg.validation_fraction, cfg.seed)

            def evaluate(w):
                features = _window_features(scans, int(w), cfg, fit_rows=train)
                return _score_dynamic(features, covariates, labels, covariate_names, cfg, train, val)

            selection = select_by_validation(cfg.window_grid, evaluate, prefer="larger", threads=1)
            _write_selection(args, cfg, selection, "window")
            window = int(selection.chosen)
        features = _window_features(scans, window, cfg)
        storage.write_dynamic_features(
            _out(args, "dynamic.csv"), features, _covariates(scans), labels, covariate_names
        )
        LOG.i("window %s: %s dynamic features for %s edges", window, features.r, features.q)
    else:
        density = cfg.density
        if args.select:
            train, val = _holdout(labels, cfg.validation_fraction, cfg.seed)

            def evaluate(d):
                table, _ = _edge_table(scans, d, cfg, covariate_names)
                return _score_static(table, cfg, train, val)

            selection = select_by_validation(cfg.density_grid, evaluate, prefer="smaller", threads=1)
            _write_selection(args, cfg, selection, "density")
            density = selection.chosen
        table, networks = _edge_table(scans, density, cfg, covariate_names)
        for scan, net in zip(scans, networks):
            path = os.path.join(args.out, "networks", f"{scan.id}.csv")
            storage.write_matrix(path, net.precision)
            storage.write_json(
                os.path.splitext(path)[0] + ".json",
                {
                    "penalty": net.penalty,
                    "density": net.density,
                    "tol": net.tol,
                    "iterations": net.iterations,
                },
            )
        storage.write_table(_out(args, "edges.csv"), table)
        LOG.i("density %s: %s edges for %s subjects", density, table.q, table.n)

    return [args.manifest] + storage.manifest_series_paths(args.manifest)


# screening and design assembly


def _training_rows(args, cfg: RunConfig, subject_ids, labels):
    """(train rows, held-out rows) from --train-ids or --split, else (None, None)"""
    if args.train_ids:
        wanted = set(storage.read_subject_ids(args.train_ids))
        if not subject_ids:
            raise ValidationError("--train-ids needs a table with subject ids")
        unknown = wanted - set(subject_ids)
        if unknown:
            raise ValidationError(f"training ids not in the table: {sorted(unknown)[:5]}")
        train = np.array([i for i, s in enumerate(subject_ids) if s in wanted], dtype=int)
        held = np.array([i for i, s in enumerate(subject_ids) if s not in wanted], dtype=int)
    elif args.split:
        train, held = _holdout(labels, cfg.test_fraction, cfg.seed)
    else:
        return None, None
    if len(train) < 2:
        raise ValidationError("screening needs at least two training subjects")
    if len(held) == 0:
        raise ValidationError("every subject is a training subject; nothing is held out")
    return train, held


def _write_split(args, subject_ids, train, held):
    if subject_ids:
        storage.write_subject_ids(_out(args, "train_ids.txt"), [subject_ids[i] for i in train])
        storage.write_subject_ids(_out(args, "held_out_ids.txt"), [subject_ids[i] for i in held])


def cmd_screen(args, cfg: RunConfig):
    inputs = storage.companion_files(args.table)
    if args.reference:
        if args.train_ids or args.split:
            raise ValidationError("--reference reuses a screened table; drop --train-ids / --split")
        inputs += storage.companion_files(args.reference)
    if args.train_ids:
        inputs.append(args.train_ids)

    if storage.is_dynamic_table(args.table):
        data = storage.read_dynamic_features(args.table)
        ids = data.features.subject_ids
        train, held = _training_rows(args, cfg, ids, data.labels)
        if args.reference:
            ref = storage.read_dynamic_features(args.reference)
            keep = _column_positions(data.features.columns, ref.features.columns)
            stats = ref.standardization
        else:
            keep = screen_dynamic(data.features, cfg.sd_threshold, train)
            stats = None
        features = data.features.select_columns(keep)
        rows = np.arange(data.labels.shape[0]) if train is None else train
        if cfg.standardize and stats is None:
            _, _, stats = standardize_dynamic(features.subset(rows), data.covariates[rows])
        if not cfg.standardize:
            stats = None
        outputs = [("screened.csv", rows)] + ([("held_out.csv", held)] if held is not None else [])
        for name, part in outputs:
            part_features, part_cov = features.subset(part), data.covariates[part]
            if stats is not None:
                part_features, part_cov, _ = standardize_dynamic(part_features, part_cov, stats)
            storage.write_dynamic_features(
                _out(args, name), part_features, part_cov, data.labels[part], data.covariate_names, stats
            )
        if held is not None:
            _write_split(args, ids, train, held)
        LOG.i("kept %s of %s edges", features.q, data.features.q)
        return inputs

    table = storage.read_table(args.table)
    train, held = _training_rows(args, cfg, table.subject_ids, table.labels)
    standardization = None
    if args.reference:
        ref = storage.read_table(args.reference)
        keep = _column_positions(table.columns, ref.columns)
        standardization = ref.standardization
    else:
        keep = screen_edges(table.values if train is None else table.values[train], cfg.sd_threshold)
    screened = assemble_design(
        table.values[:, keep],
        [table.columns[j] for j in keep],
        table.covariates,
        table.labels,
        table.subject_ids,
        table.covariate_names,
        standardize=cfg.standardize,
        train_rows=train,
        standardization=standardization,
    )
    if held is None:
        storage.write_table(_out(args, "screened.csv"), screened)
    else:
        storage.write_table(_out(args, "screened.csv"), screened.subset(train))
        storage.write_table(_out(args, "held_out.csv"), screened.subset(held))
        _write_split(args, table.subject_ids, train, held)
    LOG.i("kept %s of %s edges", screened.q, table.q)
    return inputs


def _column_positions(columns, wanted):
    index = {c: j for j, c in enumerate(columns)}
    missing = [c.name() for c in wanted if c not in index]
    if missing:
        raise ValidationError(f"reference columns missing from the table: {missing[:5]}")
    return np.array([index[c] for c in wanted], dtype=int)


# fitting


def _write_fit(args, draws: PosteriorDraws):
    storage.write_draws(_out(args, "draws.jsonl"), draws)
    rhat = [split_rhat(draws.coefficients[:, :, j]) for j in range(draws.coefficients.shape[2])]
    summary = {
        "model": draws.model,
        "n_chains": draws.n_chains,
        "n_draws": draws.n_draws,
        "mean_clusters": draws.mean_cluster_count(),
        "posterior_mean": dict(zip(draws.coefficient_names, draws.posterior_mean().tolist())),
        "max_split_rhat": float(np.nanmax(rhat)) if rhat else None,
    }
    storage.write_json(_out(args, "summary.json"), summary)
    LOG.i(
        "%s fit: %s draws, mean clusters %.2f, max split R-hat %s",
        draws.model,
        draws.n_chains * draws.n_draws,
        summary["mean_clusters"],
        summary["max_split_rhat"],
    )


def cmd_fit_static(args, cfg: RunConfig):
    table = storage.read_table(args.table)
    if cfg.intercept:
        table = table.with_intercept()
    _write_fit(args, fit_static(table, cfg.hyperparameters()))
    return storage.companion_files(args.table)


def cmd_fit_dynamic(args, cfg: RunConfig):
    data = storage.read_dynamic_features(args.features)
    covariates, names = data.covariates, data.covariate_names
    if cfg.intercept:
        covariates, names = _with_intercept(covariates, names)
    draws = fit_dynamic(data.features, covariates, data.labels, cfg.hyperparameters(), names)
    _write_fit(args, draws)
    return storage.companion_files(args.features)


def cmd_fit_multisession(args, cfg: RunConfig):
    """Screen each session, take the union of retained edges, fit one model."""
    a = storage.read_table(args.table_a)
    b = storage.read_table(args.table_b)
    storage.check_same_subjects(a.subject_ids, b.subject_ids)
    if a.columns != b.columns:
        raise ValidationError("both sessions must be indexed on the same node pairs")
    values, columns = multisession_union(
        screen_edges(a.values, cfg.sd_threshold),
        screen_edges(b.values, cfg.sd_threshold),
        a.values,
        b.values,
        a.columns,
        session_tags=(args.tags[0], args.tags[1]),
    )
    table = assemble_design(
        values,
        columns,
        a.covariates,
        a.labels,
        a.subject_ids,
        a.covariate_names,
        standardize=cfg.standardize,
    )
    storage.write_table(_out(args, "multisession.csv"), table)
    if cfg.intercept:
        table = table.with_intercept()
    _write_fit(args, fit_static(table, cfg.hyperparameters()))
    return storage.companion_files(args.table_a) + storage.companion_files(args.table_b)


# prediction and evaluation


def _design_for(draws: PosteriorDraws, path: str):
    """(ids, design, labels) of a table laid out like the fit's coefficients."""
    if draws.model == "dynamic":
        data = storage.read_dynamic_features(path)
        covariates = data.covariates
        if _fits_intercept(draws):
            covariates, _ = _with_intercept(covariates, data.covariate_names)
        return data.features.subject_ids, dynamic_design(data.features, covariates), data.labels
    table = storage.read_table(path)
    if _fits_intercept(draws):
        table = table.with_intercept()
    return table.subject_ids, table.design(), table.labels


def cmd_predict(args, cfg: RunConfig):
    draws = storage.read_draws(args.draws)
    ids, design, _ = _design_for(draws, args.table)
    prediction = predict(draws, design)
    with open(_out(args, "predictions.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "label", "score", "vote_fraction"])
        for row in zip(ids, prediction.labels, prediction.scores, prediction.vote_fraction):
            writer.writerow([row[0], int(row[1]), f"{row[2]:.17g}", f"{row[3]:.17g}"])
    return [args.draws] + storage.companion_files(args.table)


def cmd_evaluate(args, cfg: RunConfig):
    draws = storage.read_draws(args.draws)
    _, design, labels = _design_for(draws, args.table)
    labelled = ~np.isnan(labels)
    if not labelled.any():
        raise ValidationError(f"{args.table} has no labelled subjects to evaluate on")
    prediction = predict(draws, design[labelled])
    report = metrics(labels[labelled], prediction.labels)
    storage.write_json(_out(args, "metrics.json"), report.to_dict())
    with open(_out(args, "metrics.txt"), "w") as f:
        f.write(f"misclassification  {report.mc:.4f}\n")
        f.write(f"F1                 {report.f1:.4f}\n")
        f.write(f"informedness       {report.informedness:.4f}\n")
        f.write(f"TP {report.tp}  FP {report.fp}  TN {report.tn}  FN {report.fn}\n")
    LOG.i("mc %.4f, f1 %.4f, informedness %.4f", report.mc, report.f1, report.informedness)
    return [args.draws] + storage.companion_files(args.table)


def cmd_select_features(args, cfg: RunConfig):
    draws = storage.read_draws(args.draws)
    report = credible_select(draws, cfg.alpha, cfg.adjust)
    storage.write_json(_out(args, "selection.json"), report.to_dict())
    with open(_out(args, "selection.txt"), "w") as f:
        f.write(f"{'feature':<24}{'mean':>12}{'lower':>12}{'upper':>12}  significant\n")
        for rec in report.to_records():
            f.write(
                f"{rec['name']:<24}{rec['mean']:>12.4f}{rec['lower']:>12.4f}{rec['upper']:>12.4f}"
                f"  {'yes' if rec['significant'] else 'no'}\n"
            )
    LOG.i("%s of %s coefficients significant at alpha %s", len(report.selected), len(report.names), cfg.alpha)
    inputs = [args.draws]

    if args.table:
        if storage.is_dynamic_table(args.table):
            raise ValidationError("split reproducibility is available for static tables only")
        table = storage.read_table(args.table)
        if cfg.intercept:
            table = table.with_intercept()
        repro = reproducible_features(
            table, cfg.hyperparameters(), cfg.n_splits, cfg.train_fraction, cfg.alpha, cfg.adjust
        )
        storage.write_json(_out(args, "reproducible.json"), repro.to_dict())
        LOG.i("%s features significant in all %s splits", len(repro.features), cfg.n_splits)
        inputs += storage.companion_files(args.table)
    return inputs


# synthetic data and diagnostics


def _synth_spec(cfg: RunConfig) -> SynthSpec:
    margin = cfg.synth_mechanism == "margin"
    return SynthSpec(
        n=cfg.synth_n,
        q=cfg.synth_q,
        c=cfg.synth_c,
        n_signals=cfg.synth_signals,
        magnitudes=cfg.synth_magnitudes,
        noise_scale=None if margin else cfg.synth_noise_scale,
        bayes_error=cfg.synth_bayes_error if margin else None,
        mechanism=cfg.synth_mechanism,
        seed=cfg.seed,
    )


def _truth_record(truth, names) -> dict:
    record = {
        "beta": truth.beta.tolist(),
        "names": list(names),
        "signals": truth.signals.tolist(),
        "groups": truth.groups.tolist(),
        "noise_scale": truth.noise_scale,
        "bayes_error": truth.bayes_error,
    }
    if truth.eta is not None:
        record["eta"] = truth.eta.tolist()
    return record


def cmd_synth(args, cfg: RunConfig):
    if args.kind == "scans":
        scans, truth = generate_scans(
            cfg.synth_n, cfg.synth_regions, cfg.synth_timepoints, cfg.seed, n_covariates=cfg.synth_c
        )
        storage.write_manifest(_out(args, "manifest.csv"), scans)
        storage.write_json(
            _out(args, "truth.json"),
            {
                "class_edges": [list(e) for e in truth.class_edges],
                "precisions": [p.tolist() for p in truth.precisions],
            },
        )
        return []

    spec = _synth_spec(cfg)
    if args.kind == "dynamic":
        data = generate_dynamic(spec, cfg.synth_r, cfg.synth_length)
        train, test = _holdout(data.labels, cfg.test_fraction, cfg.seed)
        names = [f"c{j}" for j in range(spec.c)]
        for name, rows in (("train", train), ("test", test)):
            storage.write_dynamic_features(
                _out(args, f"{name}.csv"),
                data.features.subset(rows),
                data.covariates[rows],
                data.labels[rows],
                names,
            )
        storage.write_json(_out(args, "truth.json"), _truth_record(data.truth, names))
    else:
        data = generate(spec)
        train, test = data.split(cfg.test_fraction, cfg.seed)
        storage.write_table(_out(args, "train.csv"), train)
        storage.write_table(_out(args, "test.csv"), test)
        storage.write_json(
            _out(args, "truth.json"), _truth_record(data.truth, data.table.coefficient_names())
        )
    LOG.i("synthetic %s data, Bayes error %.4f", args.kind, data.truth.bayes_error)
    return []


def cmd_diagnose(args, cfg: RunConfig):
    # the recovery study refits every prior mode per seed and runs only on request
    checks = args.checks or ["oracles", "geweke", "prior", "sticks"]
    report = {}
    passed = True

    if "oracles" in checks:
        tv = conditional_oracles(n_draws=args.draws, seed=cfg.seed)
        ok = all(v <= ORACLE_TV for v in tv.values())
        report["oracles"] = {"tv": tv, "passed": ok}
        passed &= ok

    if "geweke" in checks:
        for name, run in (("geweke_static", geweke_static), ("geweke_dynamic", geweke_dynamic)):
            result = run(n_forward=args.forward, n_successive=args.sweeps, seed=cfg.seed)
            ok = result.passed(GEWEKE_LIMIT)
            report[name] = {"statistics": result.to_dict(), "max_abs_z": result.max_abs_z, "passed": ok}
            passed &= ok

    if "prior" in checks:
        rows = []
        for M, p in ((1.0, 50), (2.0, 50), (1.0, 200)):
            expected = expected_cluster_count(M, p)
            observed = prior_chain_cluster_count(M, p, seed=cfg.seed)
            ok = abs(observed - expected) <= PRIOR_TOLERANCE * expected
            rows.append({"M": M, "P": p, "expected": expected, "observed": observed, "passed": ok})
            passed &= ok
        report["prior_clusters"] = rows

    if "sticks" in checks:
        pvalue = stick_breaking_check(cfg.hyperparameters(), seed=cfg.seed)
        report["sticks"] = {"ks_pvalue": pvalue, "passed": pvalue > STICKS_P}
        passed &= pvalue > STICKS_P

    if "recovery" in checks:
        spec = _synth_spec(cfg)
        seeds = [cfg.seed + k for k in range(args.seeds)]
        studies = {
            mode: recovery_study(
                spec,
                dataclasses.replace(cfg.hyperparameters(), prior_mode=mode),
                seeds,
                cfg.test_fraction,
                cfg.alpha,
                "bonferroni",
            )
            for mode in PRIOR_MODES
        }
        dp = studies["dp"]
        ok = dp.passed(RECOVERY_EXCESS, RECOVERY_SIGNALS, RECOVERY_FALSE) and all(
            dp.mean_mc <= other.mean_mc for other in studies.values()
        )
        report["recovery"] = {"modes": {m: s.to_dict() for m, s in studies.items()}, "passed": ok}
        passed &= ok

    report["passed"] = bool(passed)
    storage.write_json(_out(args, "diagnostics.json"), report)
    if passed:
        LOG.i("all diagnostics passed: %s", ", ".join(checks))
    else:
        LOG.warning("some diagnostics failed, see %s", _out(args, "diagnostics.json"))
    args.failed = not passed
    return []


COMMANDS = {
    "networks": cmd_networks,
    "screen": cmd_screen,
    "fit-static": cmd_fit_static,
    "fit-dynamic": cmd_fit_dynamic,
    "fit-multisession": cmd_fit_multisession,
    "predict": cmd_predict,
    "select-features": cmd_select_features,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="key=value config file")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key"
    )
    common.add_argument("--threads", type=int, help="bound on chain / subject parallelism")
    common.add_argument(
        "--log-level", type=str.upper, choices=LOG_LEVELS, help="overrides DPLSVM_LOG_LEVEL for this run"
    )

    parser = argparse.ArgumentParser(prog="dplsvm", description="Bayesian SVM on network features")
    parser.add_argument("--version", action="version", version=f"dplsvm {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("networks", parents=[common], help="estimate static or sliding-window networks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dynamic", action="store_true", help="sliding-window features instead of glasso")
    p.add_argument("--select", action="store_true", help="pick density / window on a validation split")

    p = sub.add_parser("screen", parents=[common], help="drop low-variance edges and standardize")
    p.add_argument("--table", required=True)
    p.add_argument("--reference", help="screened training table whose columns and statistics to reuse")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--train-ids", help="file of training subject ids; the rest go to held_out.csv")
    group.add_argument("--split", action="store_true", help="seeded stratified hold-out at test_fraction")

    p = sub.add_parser("fit-static", parents=[common], help="fit the static model")
    p.add_argument("--table", required=True)

    p = sub.add_parser("fit-dynamic", parents=[common], help="fit the dynamic-connectivity model")
    p.add_argument("--features", required=True)

    p = sub.add_parser("fit-multisession", parents=[common], help="fit on the union of two sessions")
    p.add_argument("--table-a", required=True)
    p.add_argument("--table-b", required=True)
    p.add_argument("--tags", nargs=2, default=["A", "B"], metavar=("TAG_A", "TAG_B"))

    for name, text in (("predict", "label new subjects"), ("evaluate", "score a labelled table")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--draws", required=True)
        p.add_argument("--table", required=True)

    p = sub.add_parser("select-features", parents=[common], help="credible-interval feature selection")
    p.add_argument("--draws", required=True)
    p.add_argument("--table", help="also run the split reproducibility analysis on this table")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset with known truth")
    p.add_argument("--kind", choices=["static", "dynamic", "scans"], default="static")

    p = sub.add_parser("diagnose", parents=[common], help="sampler correctness checks")
    p.add_argument(
        "--check",
        dest="checks",
        action="append",
        choices=["oracles", "geweke", "prior", "sticks", "recovery"],
    )
    p.add_argument("--draws", type=int, default=10000, help="draws per conditional oracle")
    p.add_argument("--forward", type=int, default=20000, help="Geweke forward draws")
    p.add_argument("--sweeps", type=int, default=50000, help="Geweke successive pseudo-observation draws")
    p.add_argument("--seeds", type=int, default=10, help="synthetic datasets per prior mode (recovery)")
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = parse_overrides(args.set)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    return load_run_config(args.config, overrides)


def _fail(args, error: Exception, code: int) -> int:
    record = storage.write_error_record(args.out, error, code)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    if SENTRY_DSN:
        sentry_sdk.init(dsn=SENTRY_DSN, release=f"dplsvm@{VERSION}")

    LOG.d("Start running %s", args.command)
    args.failed = False
    try:
        cfg = _resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        inputs = COMMANDS[args.command](args, cfg)
        storage.write_run_manifest(args.out, args.command, inputs, cfg.seed, cfg.to_lines())
    except DPLSVMError as e:
        LOG.error("%s failed: %s", args.command, e)
        return _fail(args, e, e.code)
    except Exception as e:
        LOG.exception("unexpected error in %s", args.command)
        if SENTRY_DSN:
            sentry_sdk.capture_exception(e)
        return _fail(args, e, 1)

    LOG.d("Finish %s", args.command)
    return 1 if args.failed else 0


if __name__ == "__main__":
    sys.exit(main())
