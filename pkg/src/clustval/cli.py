"""Command-line harness: generation, clustering, indices, validation, benchmarks.

Exit codes: 0 success (including a completed suite with error rows), 2 usage
error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from ._rng import child_seed
from . import report
from .cluster import Linkage, build_dendrogram, euclidean_distances
from .data import DataMatrix, GoldStandard, gen_gaussian3, gen_gaussian5, gen_simulated6, load_matrix
from .datagen import NullModel
from .errors import DataError, NumericalError
from .indices import INDEX_FUNCTIONS, contingency
from .measures import (
    CurveSeries,
    HierClusterer,
    clusterer_from_name,
    diff_fom_predict,
    fom_curve,
    fom_r_curve,
    g_fom_predict,
    g_gap_predict,
    gap_predict,
    kl_predict,
    knee_detect,
    wcss_curve,
    wcss_r_curve,
)
from .stability import (
    StabilityConfig,
    bagclust1,
    bagclust2,
    clest_run,
    consensus_run,
    fc_run,
    levine_domany_run,
    me_run,
    roth_run,
)

_GENERATORS = {
    "gaussian3": lambda args, seed: gen_gaussian3(seed),
    "gaussian5": lambda args, seed: gen_gaussian5(args.lam, seed),
    "simulated6": lambda args, seed: gen_simulated6(seed),
}

_NULL_MODELS = {m.value: m for m in NullModel}

_CURVE_MEASURES = ("wcss", "kl", "g-gap", "wcss-r", "fom", "g-fom", "diff-fom", "fom-r")
_STABILITY_MEASURES = ("me", "clest", "consensus", "fc", "levine-domany", "roth")
_MEASURES = _CURVE_MEASURES + ("gap",) + _STABILITY_MEASURES

_REFRESH_MEASURES = ("wcss-r", "fom-r")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clustval",
        description="Cluster-number estimation: validation measures, stability measures, approximations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset as CSV plus a labels sidecar")
    gen.add_argument("dataset", choices=sorted(_GENERATORS))
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--lambda", dest="lam", type=float, default=2.0,
                     help="side length of the gaussian5 square")
    gen.add_argument("--out", required=True, help="matrix CSV path")
    gen.add_argument("--labels", required=True, help="labels sidecar path (one class per line)")
    gen.set_defaults(func=_cmd_generate)

    clu = sub.add_parser("cluster", help="cluster a matrix and write the partition")
    clu.add_argument("--matrix", required=True)
    clu.add_argument("--has-header", action="store_true")
    clu.add_argument("--label-column", type=int, default=None)
    clu.add_argument("--algo", required=True,
                     help="hier-a|hier-c|hier-s|kmeans-r|kmeans-a|kmeans-c|kmeans-s|nmf-r|nmf-a|nmf-c|nmf-s")
    clu.add_argument("--k", type=int, required=True)
    clu.add_argument("--seed", type=int, default=0)
    clu.add_argument("--niter", type=int, default=100)
    clu.add_argument("--bag", choices=["bagclust1", "bagclust2"], default=None,
                     help="wrap the algorithm in a bootstrap/subsample aggregation")
    clu.add_argument("--rounds", type=int, default=20, help="aggregation rounds for --bag")
    clu.add_argument("--beta", type=float, default=0.8, help="subsample fraction for bagclust2")
    clu.add_argument("--out", required=True, help="partition output (one cluster index per line)")
    clu.add_argument("--dendrogram-out", default=None, help="merge-list CSV (hierarchical only)")
    clu.add_argument("--factorization-dir", default=None,
                     help="dump W/H/objective-trace CSVs (nmf algorithms only)")
    clu.set_defaults(func=_cmd_cluster)

    ind = sub.add_parser("indices", help="external agreement indices of two labelings")
    ind.add_argument("--labels", required=True, help="reference classification file")
    ind.add_argument("--partition", required=True, help="clustering solution file")
    ind.set_defaults(func=_cmd_indices)

    val = sub.add_parser("validate", help="run a validation measure end to end")
    val.add_argument("--matrix", required=True)
    val.add_argument("--has-header", action="store_true")
    val.add_argument("--label-column", type=int, default=None)
    val.add_argument("--labels", default=None, help="gold labels sidecar (optional)")
    val.add_argument("--measure", required=True, choices=sorted(_MEASURES))
    val.add_argument("--clusterer", default=None,
                     help="clustering algorithm (default hier-a; refresh measures run their own descent)")
    val.add_argument("--index", default="fm", choices=sorted(INDEX_FUNCTIONS),
                     help="external index used inside me/clest")
    val.add_argument("--agreement-index", default=None, choices=sorted(INDEX_FUNCTIONS),
                     help="also score the consensus-distance clustering at k* against --labels")
    val.add_argument("--k-min", type=int, default=2)
    val.add_argument("--k-max", type=int, default=30)
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--niter", type=int, default=100)
    val.add_argument("--refresh", type=int, default=0, help="refresh step R of wcss-r/fom-r")
    val.add_argument("--null-model", default="ps", choices=sorted(_NULL_MODELS))
    val.add_argument("--gap-steps", type=int, default=20)
    val.add_argument("--gap-null-count", type=int, default=10)
    val.add_argument("--h", type=int, default=None,
                     help="resampling iterations (default: consensus/fc 250, me 100, clest/roth 20)")
    val.add_argument("--p", type=float, default=0.8, help="consensus/fc subsample fraction")
    val.add_argument("--beta", type=float, default=0.8, help="subsample fraction of me/levine-domany")
    val.add_argument("--alpha", type=float, default=0.0,
                     help="training split fraction of clest/roth (0 = their defaults)")
    val.add_argument("--b0", type=int, default=20, help="clest null datasets")
    val.add_argument("--out-dir", default=".", help="directory for curve CSVs and figures")
    val.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    val.set_defaults(func=_cmd_validate)

    ben = sub.add_parser("bench", help="run a declarative benchmark suite")
    ben.add_argument("config", help="INI suite definition")
    ben.add_argument("--out", default=None, help="report CSV (overrides the suite's 'out')")
    ben.add_argument("--figures", action="store_true", help="render per-cell figures")
    ben.set_defaults(func=_cmd_bench)
    return parser


def _usage_error(message: str) -> "NoReturn":  # noqa: F821
    print(f"usage error: {message}", file=sys.stderr)
    sys.exit(2)


# ---------------------------------------------------------------------------
# generate / cluster / indices
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    D, gold = _GENERATORS[args.dataset](args, args.seed)
    report.write_matrix_csv(D, args.out)
    report.write_labels(gold, args.labels)
    print(f"wrote {D.n}x{D.m} matrix to {args.out} and {gold.class_count}-class labels to {args.labels}")
    return 0


def _cmd_cluster(args) -> int:
    D = load_matrix(args.matrix, has_header=args.has_header, label_column=args.label_column)
    clusterer = clusterer_from_name(args.algo, niter=args.niter)
    if args.factorization_dir is not None and not args.algo.startswith("nmf-"):
        _usage_error("--factorization-dir applies to the nmf algorithms only")
    if args.bag == "bagclust1":
        P = bagclust1(D, clusterer, args.k, args.rounds, args.seed)
    elif args.bag == "bagclust2":
        _, P = bagclust2(D, clusterer, args.k, args.rounds, args.beta, args.seed)
    elif args.factorization_dir is not None:
        from pathlib import Path as _Path

        from .cluster import cut_dendrogram
        from .nmf import nmf_cluster_with_factorization

        warm = None
        if args.algo != "nmf-r":
            linkage = clusterer_from_name(f"hier-{args.algo.removeprefix('nmf-')}").linkage
            warm = cut_dendrogram(build_dendrogram(euclidean_distances(D), linkage), args.k)
        P, fact = nmf_cluster_with_factorization(D, args.k, init_partition=warm, seed=args.seed)
        out_dir = _Path(args.factorization_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_factorization_csv(fact, out_dir)
    else:
        P = clusterer.cluster(D, args.k, args.seed)
    report.write_partition(P, args.out)
    if args.dendrogram_out:
        if not isinstance(clusterer, HierClusterer):
            _usage_error("--dendrogram-out needs a hierarchical clusterer (hier-a|hier-c|hier-s)")
        report.write_dendrogram_csv(clusterer.dendrogram(D), args.dendrogram_out)
    print(f"wrote {P.k}-cluster partition of {P.n} items to {args.out}")
    return 0


def _cmd_indices(args) -> int:
    a = report.read_labels(args.labels)
    b = report.read_labels(args.partition)
    table = contingency(a, b)
    out = {
        "rand": INDEX_FUNCTIONS["rand"](table),
        "adjusted_rand": INDEX_FUNCTIONS["adjusted-rand"](table),
        "fm": INDEX_FUNCTIONS["fm"](table),
        "f": INDEX_FUNCTIONS["f"](table),
        "n": table.n,
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _resolve_clusterer_name(measure: str, clusterer_name: str | None) -> str:
    if clusterer_name is None:
        return "refresh" if measure in _REFRESH_MEASURES else "hier-a"
    _check_combination(measure, clusterer_name)
    return clusterer_name


def _check_combination(measure: str, clusterer_name: str) -> None:
    if measure in _REFRESH_MEASURES and clusterer_name not in ("refresh", "kmeans-r"):
        raise DataError(
            f"measure {measure!r} runs its own merge/refresh descent; valid clusterers: refresh, kmeans-r"
        )
    if measure in _STABILITY_MEASURES + ("gap", "wcss", "kl", "g-gap", "fom", "g-fom", "diff-fom") \
            and clusterer_name == "refresh":
        raise DataError(
            f"measure {measure!r} needs a real clustering algorithm; valid: hier-a|hier-c|hier-s|"
            f"kmeans-r|kmeans-a|kmeans-c|kmeans-s|nmf-*"
        )


def _default_h(measure: str) -> int:
    return {"consensus": 250, "fc": 250, "me": 100, "clest": 20, "roth": 20, "levine-domany": 100}[measure]


def _log_curve(curve: CurveSeries) -> CurveSeries:
    if np.any(curve.values <= 0):
        raise DataError("cannot take the log of a WCSS curve touching zero; lower k_max")
    return CurveSeries(curve.k_values, np.log(curve.values))


def _run_validate_measure(args, D: DataMatrix):
    """Returns (prediction, curves to write, extra writers, parameter record)."""
    measure = args.measure
    seed = args.seed
    k_max = min(args.k_max, D.n - 1)
    params = {"measure": measure, "seed": seed, "k_min": args.k_min, "k_max": k_max}
    curves: dict[str, CurveSeries] = {}
    extra = []

    if measure in _CURVE_MEASURES:
        if measure in _REFRESH_MEASURES:
            params["refresh"] = args.refresh
            if measure == "wcss-r":
                curve = wcss_r_curve(D, args.refresh, k_max, args.niter, seed)
            else:
                curve = fom_r_curve(D, args.refresh, k_max, args.niter, seed)
            clusterer_name = f"refresh-r{args.refresh}"
        else:
            clusterer = clusterer_from_name(args.clusterer, niter=args.niter)
            clusterer_name = clusterer.name
            if measure in ("wcss", "kl", "g-gap"):
                curve = wcss_curve(D, clusterer, k_max, seed)
            else:
                curve = fom_curve(D, clusterer, k_max, seed)
        params["clusterer"] = clusterer_name
        curves[measure.replace("-", "_")] = curve
        if measure in ("wcss", "wcss-r", "fom", "fom-r"):
            prediction = knee_detect(curve)
        elif measure == "kl":
            prediction = kl_predict(curve, D.m)
        elif measure == "g-gap":
            prediction = g_gap_predict(_log_curve(curve))
        elif measure == "g-fom":
            prediction = g_fom_predict(curve)
        else:
            prediction = diff_fom_predict(curve, D.m)
        return prediction, curves, extra, params

    clusterer = clusterer_from_name(args.clusterer, niter=args.niter)
    params["clusterer"] = clusterer.name

    if measure == "gap":
        params.update({"null_model": args.null_model, "steps": args.gap_steps, "l": args.gap_null_count})
        prediction = gap_predict(
            D, clusterer, _NULL_MODELS[args.null_model],
            l=args.gap_null_count, steps=args.gap_steps, k_max=k_max, seed=seed,
        )
        curves["gap"] = prediction.evidence
        return prediction, curves, extra, params

    H = args.h if args.h is not None else _default_h(measure)
    params["H"] = H
    if measure in ("consensus", "fc"):
        params["p"] = args.p
        run = consensus_run if measure == "consensus" else fc_run
        result = run(D, clusterer, H=H, p=args.p, k_range=range(args.k_min, k_max + 1), seed=seed)
        curves["area"] = result.area
        curves["delta"] = result.delta
        curves["delta_prime"] = result.delta_prime
        extra.append(("consensus", result))
        return result.prediction, curves, extra, params

    cfg = StabilityConfig(
        k_min=args.k_min, k_max=k_max, H=H, beta=args.beta, alpha=args.alpha,
        clusterers=(clusterer,), external_index=args.index, seed=seed,
    )
    if measure == "me":
        params.update({"beta": args.beta, "index": args.index})
        result = me_run(D, cfg)
        curves["me_mean"] = result.prediction.evidence
        extra.append(("me", result))
        return result.prediction, curves, extra, params
    if measure == "clest":
        params.update({"alpha": args.alpha, "index": args.index, "B0": args.b0,
                       "null_model": args.null_model})
        result = clest_run(D, cfg, B0=args.b0, null_model=_NULL_MODELS[args.null_model])
        curves["clest_d"] = result.prediction.evidence
        return result.prediction, curves, extra, params
    if measure == "levine-domany":
        params["beta"] = args.beta
        curve, prediction = levine_domany_run(D, cfg)
        curves["ld"] = curve
        return prediction, curves, extra, params
    params["alpha"] = args.alpha
    curve, prediction = roth_run(D, cfg)
    curves["roth"] = curve
    return prediction, curves, extra, params


def _cmd_validate(args) -> int:
    try:
        args.clusterer = _resolve_clusterer_name(args.measure, args.clusterer)
    except DataError as exc:
        _usage_error(str(exc))
    if args.agreement_index and not args.labels:
        _usage_error("--agreement-index needs --labels with the gold classification")
    D = load_matrix(args.matrix, has_header=args.has_header, label_column=args.label_column)
    gold = None
    if args.labels:
        labels = report.read_labels(args.labels)
        gold = GoldStandard(labels, int(labels.max()) + 1)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prediction, curves, extra, params = _run_validate_measure(args, D)

    for name, curve in curves.items():
        if curve is None:
            continue
        report.write_curve_csv(curve, out_dir / f"{args.measure}_{name}.csv", name)
        if not args.no_figures:
            report.save_curve_figure(
                curve, out_dir / f"{args.measure}_{name}.png",
                title=f"{args.measure} on {Path(args.matrix).name}", ylabel=name,
                mark_k=prediction.k_star,
            )
    for kind, result in extra:
        if kind == "consensus":
            report.write_consensus_csv(result, out_dir, prefix=args.measure)
            if not args.no_figures:
                report.save_consensus_figure(result, out_dir / f"{args.measure}_summary.png",
                                             title=f"{args.measure} on {Path(args.matrix).name}")
        elif kind == "me":
            report.write_me_histograms_csv(result, out_dir / "me_histograms.csv")
            if not args.no_figures:
                report.save_me_figure(result, out_dir / "me_histograms.png")

    record = report.prediction_record(args.measure, prediction, params)
    if gold is not None:
        record["gold_k"] = gold.class_count
    if args.agreement_index:
        from .cluster import cut_dendrogram
        from .stability import consensus_to_distance

        consensus_results = [r for kind, r in extra if kind == "consensus"]
        if not consensus_results:
            _usage_error("--agreement-index applies to the consensus/fc measures")
        distances = consensus_to_distance(consensus_results[0], prediction.k_star)
        linkage = getattr(clusterer_from_name(args.clusterer), "linkage", Linkage.AVERAGE)
        P = cut_dendrogram(build_dendrogram(distances, linkage), prediction.k_star)
        table = contingency(gold.labels, P.assignment)
        record["consensus_distance_agreement"] = INDEX_FUNCTIONS[args.agreement_index](table)

    report.write_prediction_json(record, out_dir / f"{args.measure}_prediction.json")
    print(json.dumps(record, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _parse_suite(path: str):
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        where = f" (line {line})" if line else ""
        _usage_error(f"malformed suite config{where}: {exc.message if hasattr(exc, 'message') else exc}")
    if not read:
        _usage_error(f"cannot read suite config {path!r}")

    suite = dict(parser["suite"]) if parser.has_section("suite") else {}
    datasets, measures, clusterers = {}, {}, {}
    for section in parser.sections():
        if section == "suite":
            continue
        if ":" not in section:
            _usage_error(f"section [{section}] must be dataset:<name>, measure:<name> or clusterer:<name>")
        kind, name = section.split(":", 1)
        body = dict(parser[section])
        if kind == "dataset":
            datasets[name] = body
        elif kind == "measure":
            measures[name] = body
        elif kind == "clusterer":
            clusterers[name] = body
        else:
            _usage_error(f"unknown section kind [{section}]")
    return suite, datasets, measures, clusterers


def _suite_dataset(name: str, body: dict, seed: int):
    if "generator" in body:
        gen = body["generator"]
        if gen == "gaussian3":
            return gen_gaussian3(seed)
        if gen == "gaussian5":
            return gen_gaussian5(float(body.get("lambda", 2.0)), seed)
        if gen == "simulated6":
            return gen_simulated6(seed)
        _usage_error(f"dataset {name!r}: unknown generator {gen!r}")
    if "matrix" not in body:
        _usage_error(f"dataset {name!r} needs either generator= or matrix=")
    D = load_matrix(body["matrix"], has_header=body.get("has_header", "no") == "yes",
                    label_column=int(body["label_column"]) if "label_column" in body else None)
    gold = None
    if "labels" in body:
        labels = report.read_labels(body["labels"])
        gold = GoldStandard(labels, int(labels.max()) + 1)
    return D, gold


def _bench_cell(D, gold, measure_body, clusterer_body, k_min, k_max, seed, figures_dir, cell_name):
    """Runs one suite cell; returns (k_star, milliseconds, params)."""
    kind = measure_body.get("kind")
    if kind not in _MEASURES:
        raise DataError(f"unknown measure kind {kind!r}")
    algo = _resolve_clusterer_name(kind, clusterer_body.get("algo"))
    k_max = min(k_max, D.n - 1)
    args = argparse.Namespace(
        measure=kind,
        clusterer=algo,
        seed=seed,
        k_min=k_min,
        k_max=k_max,
        niter=int(measure_body.get("niter", 100)),
        refresh=int(measure_body.get("refresh", 0)),
        null_model=measure_body.get("null_model", "ps"),
        gap_steps=int(measure_body.get("steps", 20)),
        gap_null_count=int(measure_body.get("l", 10)),
        h=int(measure_body["h"]) if "h" in measure_body else None,
        p=float(measure_body.get("p", 0.8)),
        beta=float(measure_body.get("beta", 0.8)),
        alpha=float(measure_body.get("alpha", 0.0)),
        b0=int(measure_body.get("b0", 20)),
        index=measure_body.get("index", "fm"),
    )
    started = time.perf_counter()
    prediction, curves, extra, params = _run_validate_measure(args, D)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    if figures_dir is not None:
        for name, curve in curves.items():
            if curve is not None:
                report.save_curve_figure(curve, figures_dir / f"{cell_name}_{name}.png",
                                         title=cell_name, ylabel=name, mark_k=prediction.k_star)
    return prediction.k_star, elapsed_ms, params


def _cmd_bench(args) -> int:
    suite, datasets, measures, clusterers = _parse_suite(args.config)
    seed = int(suite.get("seed", 0))
    k_min = int(suite.get("k_min", 2))
    k_max = int(suite.get("k_max", 10))
    out_path = args.out or suite.get("out", "bench_report.csv")
    figures_dir = None
    if args.figures:
        figures_dir = Path(suite.get("figures_dir", Path(out_path).parent / "figures"))
        figures_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for ds_name in sorted(datasets):
        ds_seed = child_seed(seed, "dataset", ds_name)
        try:
            D, gold = _suite_dataset(ds_name, datasets[ds_name], ds_seed)
        except DataError as exc:
            for m_name in sorted(measures):
                for c_name in sorted(clusterers):
                    rows.append([ds_name, m_name, c_name, "", "", "", seed, "{}", f"data-error: {exc}"])
            continue
        for m_name in sorted(measures):
            for c_name in sorted(clusterers):
                cell_seed = child_seed(seed, "cell", ds_name, m_name, c_name)
                cell = f"{ds_name}_{m_name}_{c_name}"
                try:
                    k_star, ms, params = _bench_cell(
                        D, gold, measures[m_name], clusterers[c_name],
                        k_min, k_max, cell_seed, figures_dir, cell,
                    )
                    gold_k = gold.class_count if gold is not None else ""
                    rows.append([ds_name, m_name, c_name, k_star, gold_k,
                                 f"{ms:.3f}", cell_seed, json.dumps(params, sort_keys=True), ""])
                except DataError as exc:
                    rows.append([ds_name, m_name, c_name, "", "", "", cell_seed, "{}",
                                 f"data-error: {exc}"])
                except NumericalError as exc:
                    rows.append([ds_name, m_name, c_name, "", "", "", cell_seed, "{}",
                                 f"numerical-error: {exc}"])

    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "measure", "clusterer", "k_star", "gold_k",
                         "milliseconds", "seed", "parameters", "error"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
