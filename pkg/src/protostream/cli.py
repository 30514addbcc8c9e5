"""Command line entry points: synthesize datasets, train the offline
baseline, sweep streaming runs into a JSONL log, and report omega/mu CSVs.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from .buffers import CluStreamParams, HPStreamParams
from .data import (Dataset, ORDERING_KINDS, StreamOrdering, SynthSpec,
                   load_feature_matrix, load_manifest, synth_gaussian, write_dataset)
from .errors import DataFormatError, NumericError, UsageError
from .metrics import OmegaResult, mu_total, omega_score
from .mlp import MLPClassifier, MLPConfig, fit_offline
from .protocol import METHODS, AccuracyCurve, RunConfig, execute_run

SMALL_LABEL_SET_SIZES = (2, 4, 8, 16, 32, 64, 128, 256)
LARGE_LABEL_SET_SIZES = (2, 4, 8, 16)
LARGE_LABEL_SET_MIN = 100

_dataset_cache: dict[tuple, Dataset] = {}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protostream",
        description="Streaming classification with memory-bounded rehearsal buffers.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="JSON file of synthesis parameters")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("baseline", help="train the offline baseline")
    p.add_argument("--features", required=True, help="FEAT binary feature file")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--config", required=True, help="JSON with mlp settings and epochs")
    p.add_argument("--seed", type=int, help="override the learner seed")
    p.add_argument("--out", required=True, help="baseline JSON output path")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("run", help="execute a sweep of streaming runs")
    p.add_argument("--config", required=True, help="sweep JSON")
    p.add_argument("--baseline", required=True, help="baseline JSON from the baseline command")
    p.add_argument("--features", help="override the sweep's feature file")
    p.add_argument("--manifest", help="override the sweep's manifest")
    p.add_argument("--eval-every", type=int, help="override the evaluation stride")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", required=True, help="results JSONL (appended, resumable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize results as omega/mu CSV tables")
    p.add_argument("--results", required=True, help="results JSONL from the run command")
    p.add_argument("--baseline", required=True, help="baseline JSON")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.set_defaults(func=cmd_report)
    return parser


def _load_json(path, what):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from exc


def _build(cls, payload, what):
    if not isinstance(payload, dict):
        raise UsageError(f"{what} must be a JSON object")
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = sorted(set(payload) - fields)
    if unknown:
        raise UsageError(f"unknown {what} keys: {unknown}")
    return cls(**payload)


def _load_dataset(features_path, manifest_path, normalize, name=None) -> Dataset:
    key = (str(features_path), str(manifest_path), bool(normalize), name)
    if key not in _dataset_cache:
        for path, what in ((features_path, "features"), (manifest_path, "manifest")):
            if not Path(path).exists():
                raise UsageError(f"{what} file not found: {path}")
        matrix = load_feature_matrix(features_path)
        _dataset_cache[key] = load_manifest(manifest_path, matrix,
                                            name=name, normalize=normalize)
    return _dataset_cache[key]


# -- synth ---------------------------------------------------------------

def cmd_synth(args) -> int:
    payload = _load_json(args.config, "synth config")
    if args.seed is not None:
        payload["seed"] = args.seed
    spec = _build(SynthSpec, payload, "synth config")
    dataset = synth_gaussian(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    features = out / "features.feat"
    manifest = out / "manifest.csv"
    write_dataset(dataset, features, manifest)
    print(f"wrote {features} and {manifest}: "
          f"{len(dataset.train)} train / {len(dataset.test)} test samples, "
          f"{dataset.num_classes} classes, dim {dataset.dim}")
    return 0


# -- baseline ------------------------------------------------------------

def cmd_baseline(args) -> int:
    payload = _load_json(args.config, "baseline config")
    mlp_payload = dict(payload.get("mlp", {}))
    if args.seed is not None:
        mlp_payload["seed"] = args.seed
    config = _build(MLPConfig, mlp_payload, "mlp config")
    epochs = int(payload.get("epochs", 20))
    normalize = bool(payload.get("normalize", True))
    name = payload.get("dataset")
    dataset = _load_dataset(args.features, args.manifest, normalize, name)
    model = MLPClassifier(config, dataset.dim, dataset.num_classes)
    _, accuracy = fit_offline(model, dataset, epochs)
    record = {"dataset": dataset.name, "seed": config.seed,
              "accuracy": accuracy, "epochs": epochs}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(record, sort_keys=True) + "\n")
    print(f"offline baseline for {dataset.name}: accuracy {accuracy:.4f} "
          f"({epochs} epochs) -> {out}")
    return 0


# -- run -----------------------------------------------------------------

def cmd_run(args) -> int:
    sweep = _load_json(args.config, "sweep config")
    if not isinstance(sweep, dict):
        raise UsageError("sweep config must be a JSON object")
    if args.features:
        sweep["features"] = args.features
    if args.manifest:
        sweep["manifest"] = args.manifest
    if args.eval_every is not None:
        sweep["eval_every"] = args.eval_every
    if args.jobs is not None and args.jobs < 1:
        raise UsageError("--jobs must be at least 1")

    for key in ("dataset", "features", "manifest", "methods", "orderings", "seeds"):
        if key not in sweep:
            raise UsageError(f"sweep config is missing the {key!r} key")
    dataset_name = str(sweep["dataset"])

    baseline = _load_json(args.baseline, "baseline")
    if baseline.get("dataset") != dataset_name:
        raise UsageError(
            f"no baseline for dataset {dataset_name!r} in {args.baseline} "
            f"(found {baseline.get('dataset')!r}); run 'protostream baseline' first")

    methods = list(sweep["methods"])
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; expected one of {METHODS}")
    orderings = list(sweep["orderings"])
    for o in orderings:
        if o not in ORDERING_KINDS:
            raise UsageError(f"unknown ordering {o!r}; expected one of {ORDERING_KINDS}")
    seeds = [int(s) for s in sweep["seeds"]]
    if not methods or not orderings or not seeds:
        raise UsageError("sweep needs at least one method, ordering and seed")

    normalize = bool(sweep.get("normalize", True))
    dataset = _load_dataset(sweep["features"], sweep["manifest"], normalize, dataset_name)

    sizes = sweep.get("buffer_sizes")
    if sizes is None:
        sizes = (LARGE_LABEL_SET_SIZES if dataset.num_classes >= LARGE_LABEL_SET_MIN
                 else SMALL_LABEL_SET_SIZES)
    sizes = [int(b) for b in sizes]
    if any(b < 1 for b in sizes):
        raise UsageError("buffer_sizes must be positive")

    eval_every = int(sweep.get("eval_every", 1))
    mlp_payload = dict(sweep.get("mlp", {}))
    clustream = sweep.get("clustream")
    hpstream = sweep.get("hpstream")

    tasks = []
    for method in methods:
        per_method_sizes = [0] if method in ("full", "no_buffer") else sizes
        for b in per_method_sizes:
            for ordering in orderings:
                for seed in seeds:
                    run_id = f"{dataset_name}-{method}-b{b}-{ordering}-s{seed}"
                    tasks.append({
                        "run_id": run_id,
                        "dataset": dataset_name,
                        "features": str(sweep["features"]),
                        "manifest": str(sweep["manifest"]),
                        "normalize": normalize,
                        "method": method,
                        "buffer_size": b,
                        "ordering": ordering,
                        "seed": seed,
                        "eval_every": eval_every,
                        "mlp": mlp_payload,
                        "clustream": clustream,
                        "hpstream": hpstream,
                    })

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    done = _completed_run_ids(out)
    pending = [t for t in tasks if t["run_id"] not in done]
    print(f"{len(tasks)} runs in sweep, {len(tasks) - len(pending)} already complete, "
          f"{len(pending)} to execute with {args.jobs} job(s)")

    with open(out, "a") as log:
        if args.jobs == 1:
            for task in pending:
                _write_records(log, _execute_task(task))
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_execute_task, task) for task in pending]
                for future in as_completed(futures):
                    _write_records(log, future.result())
    return 0


def _completed_run_ids(path: Path) -> set[str]:
    done = set()
    if not path.exists():
        return done
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: corrupt results line: {exc}") from exc
            if "memory_cost" in record:
                done.add(record["run_id"])
    return done


def _write_records(log, records):
    for record in records:
        log.write(json.dumps(record, sort_keys=True) + "\n")
    log.flush()


def _execute_task(task) -> list[dict]:
    dataset = _load_dataset(task["features"], task["manifest"],
                            task["normalize"], task["dataset"])
    mlp_payload = dict(task["mlp"])
    mlp_payload["seed"] = task["seed"]
    config = RunConfig(
        strategy=task["method"],
        buffer_size=task["buffer_size"],
        ordering=StreamOrdering(task["ordering"], task["seed"]),
        mlp=_build(MLPConfig, mlp_payload, "mlp config"),
        eval_every=task["eval_every"],
        buffer_seed=task["seed"],
        dataset_name=task["dataset"],
        clustream=_build(CluStreamParams, task["clustream"], "clustream params")
        if task["clustream"] else None,
        hpstream=_build(HPStreamParams, task["hpstream"], "hpstream params")
        if task["hpstream"] else None,
    )
    result = execute_run(dataset, config)
    identity = {
        "run_id": task["run_id"],
        "dataset": task["dataset"],
        "method": task["method"],
        "buffer_size": task["buffer_size"],
        "ordering": task["ordering"],
        "seed": task["seed"],
    }
    records = []
    for t, accuracy in result.curve.events:
        records.append({**identity, "t": t, "accuracy": accuracy})
    records.append({**identity,
                    "wall_clock_s": result.wall_clock_s,
                    "memory_cost": result.memory_cost})
    return records


# -- report ----------------------------------------------------------------

def cmd_report(args) -> int:
    results_path = Path(args.results)
    if not results_path.exists():
        raise UsageError(f"results file not found: {results_path}")
    baseline = _load_json(args.baseline, "baseline")
    if "dataset" not in baseline or "accuracy" not in baseline:
        raise DataFormatError(f"{args.baseline}: baseline needs dataset and accuracy fields")

    events, metas = _read_events(results_path)
    if not events:
        raise DataFormatError(f"{results_path}: no event records to report")

    omegas = _per_run_omegas(events, metas, baseline)
    table_rows, plot_rows = _aggregate(omegas)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / "omega_table.csv"
    plot_path = out / "plot_data.csv"
    _write_csv(table_path, ("dataset", "ordering", "method", "buffer_size",
                            "omega", "omega_std", "seeds"), table_rows)
    _write_csv(plot_path, ("dataset", "ordering", "method", "buffer_size",
                           "omega", "omega_std"), plot_rows)
    print(f"wrote {table_path} and {plot_path}")
    return 0


def _read_events(path):
    """Collect event records keyed by (run_id, t), last record winning, so a
    rerun after a partially-written run never double-counts events."""
    events: dict[tuple[str, int], float] = {}
    metas: dict[str, dict] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: corrupt results line: {exc}") from exc
            run_id = record.get("run_id")
            if run_id is None:
                raise DataFormatError(f"{path}: record without run_id")
            metas.setdefault(run_id, {k: record[k] for k in
                                      ("dataset", "method", "buffer_size", "ordering", "seed")})
            if "t" in record:
                events[(run_id, int(record["t"]))] = float(record["accuracy"])
    return events, metas


def _per_run_omegas(events, metas, baseline):
    by_run: dict[str, list[tuple[int, float]]] = {}
    for (run_id, t), accuracy in events.items():
        by_run.setdefault(run_id, []).append((t, accuracy))

    baseline_curve = baseline.get("curve")
    baseline_lookup = None
    if baseline_curve is not None:
        baseline_lookup = {int(t): float(a) for t, a in baseline_curve}

    omegas = []
    for run_id, pairs in by_run.items():
        meta = metas[run_id]
        if meta["dataset"] != baseline["dataset"]:
            raise DataFormatError(
                f"run {run_id} is for dataset {meta['dataset']!r} but the baseline "
                f"covers {baseline['dataset']!r}")
        pairs.sort()
        times = np.array([t for t, _ in pairs])
        values = np.array([a for _, a in pairs])
        if baseline_lookup is not None:
            missing = [int(t) for t in times if int(t) not in baseline_lookup]
            if missing:
                raise DataFormatError(
                    f"baseline curve lacks event times {missing[:5]} needed by {run_id}")
            offline = np.array([baseline_lookup[int(t)] for t in times])
        else:
            offline = np.full(len(times), float(baseline["accuracy"]))
        stream = AccuracyCurve(times, values)
        off = AccuracyCurve(times, offline)
        score = omega_score(stream, off, buffer_size=meta["buffer_size"])
        omegas.append((meta, score))
    return omegas


def _aggregate(omegas):
    groups: dict[tuple, list[float]] = {}
    for meta, score in omegas:
        key = (meta["dataset"], meta["ordering"], meta["method"], int(meta["buffer_size"]))
        groups.setdefault(key, []).append(score.omega)

    table_rows = []
    plot_rows = []
    by_method: dict[tuple, list] = {}
    for key in sorted(groups):
        dataset, ordering, method, size = key
        values = np.array(groups[key])
        mean = float(values.mean())
        std = float(values.std())
        row = (dataset, ordering, method, str(size), f"{mean:.3f}", f"{std:.3f}")
        table_rows.append(row + (str(len(values)),))
        plot_rows.append(row)
        by_method.setdefault((dataset, ordering, method), []).append((size, mean))

    summary_rows = []
    for (dataset, ordering, method), pairs in sorted(by_method.items()):
        per_size = [OmegaResult(size, mean, 0) for size, mean in pairs]
        mu = mu_total(per_size).mu
        summary_rows.append((dataset, ordering, method, "mu_total", f"{mu:.3f}", "", ""))

    return table_rows + summary_rows, plot_rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())
