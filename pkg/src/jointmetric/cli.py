"""Command-line pipeline: generate, sample, split, train, cv, eval, consistency, curve and more.

Every run writes a JSON manifest (arguments, resolved settings, inputs,
outputs, seed, version, wall clock). ``jointmetric replay MANIFEST`` reruns
it with the recorded settings. Settings resolve as CLI flag, then
``--config`` JSON, then built-in default.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical divergence.
"""

import argparse
import glob
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__, io
from .data import GroundTruthViews, TripletDataset, gen_clustered, gen_uniform, landmark_views
from .data import partition_to_triplets, sample_triplets, split_train_test
from .evaluation import EvalReport, consistency_matrix, loo_knn_error, metric_distances, triplet_error, write_curve_csv
from .exceptions import DivergedError, JointMetricError
from .experiments import run_curve, stream_seed
from .solver import DEFAULT_GRID, MODES, SolverConfig, cross_validate, train
from .supervised import SupervisedTask, knn_classify, pca_fit, pool_for, train_supervised

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

# Solver settings exposed as flags: (flag, SolverConfig field, type).
SOLVER_FLAGS = (
    ("--mode", "mode", str),
    ("--dim", "dim", int),
    ("--beta", "beta", float),
    ("--gamma", "gamma", float),
    ("--eta0", "eta0", float),
    ("--m-max", "m_max", int),
    ("--outer-max", "outer_max", int),
    ("--rel-tol", "rel_tol", float),
    ("--eta-backoff", "eta_backoff", int),
)
SOLVER_SWITCHES = (("--full-psd", "full_psd"), ("--freeze-L", "freeze_L"))
GENERAL_DEFAULTS = {"seed": 0, "threads": 1, "deterministic": False}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# settings and manifests


def _snapshot_defaults(extra):
    base = dict(GENERAL_DEFAULTS)
    base.update(extra)
    return base


def resolve_settings(args, defaults, replayed=None):
    """CLI flags over ``--config`` JSON over ``defaults``; a replay uses its recorded values."""
    if replayed is not None:
        return dict(replayed)
    settings = dict(defaults)
    if getattr(args, "config", None):
        cfg = io.read_json(args.config)
        if not isinstance(cfg, dict):
            raise UsageError("--config must hold a JSON object")
        unknown = set(cfg) - set(settings)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(cfg)
    for key in settings:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def solver_config(settings):
    fields = {k: v for k, v in settings.items() if k in SolverConfig.__dataclass_fields__}
    try:
        return SolverConfig.from_dict(fields)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _solver_defaults():
    return {k: v for k, v in SolverConfig().to_dict().items() if k not in ("seed", "threads", "deterministic")}


def write_manifest(path, command, argv, settings, inputs, outputs, started, elapsed):
    io.write_json(
        path,
        {
            "command": command,
            "argv": list(argv),
            "settings": settings,
            "inputs": list(inputs),
            "outputs": list(outputs),
            "seed": settings.get("seed"),
            "version": __version__,
            "started": started,
            "wall_clock_s": round(elapsed, 3),
        },
    )


# ---------------------------------------------------------------------------
# helpers


def _load_views(paths):
    files = []
    for p in paths:
        files.extend(sorted(glob.glob(os.path.join(p, "D_*.txt")), key=_view_index) if os.path.isdir(p) else [p])
    if not files:
        raise UsageError("no distance matrices given")
    return GroundTruthViews(tuple(io.read_matrix(f) for f in files)), files


def _view_index(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    return int(stem.split("_")[-1])


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _gamma_spec(text):
    """``0.1`` or ``joint=0.01,pooled=1,independent=1``."""
    if "=" not in text:
        return float(text)
    out = {}
    for part in text.split(","):
        name, _, val = part.partition("=")
        out[name.strip()] = float(val)
    return out


def _dataset(args):
    X = io.load_features(args.features) if getattr(args, "features", None) else None
    return io.load_triplets(args.triplets, features=X)


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ---------------------------------------------------------------------------
# commands; each returns (inputs, outputs, default manifest path)


def cmd_generate(args, s):
    os.makedirs(args.out_dir, exist_ok=True)
    if s["kind"] == "uniform":
        syn = gen_uniform(n=s["n"], dim=s["input_dim"], subspace_dims=tuple(s["subspace_dims"]), seed=s["seed"])
    else:
        syn = gen_clustered(
            n=s["n"],
            clusters=s["clusters"],
            variance=s["variance"],
            box_side=s["box_side"],
            dim=s["input_dim"],
            subspace_dims=tuple(s["subspace_dims"]),
            seed=s["seed"],
        )
    outs = [os.path.join(args.out_dir, "points.tsv")]
    io.save_features(outs[0], syn.points)
    if syn.labels is not None:
        outs.append(os.path.join(args.out_dir, "labels.tsv"))
        io.save_labels(outs[-1], syn.labels)
    for t, D in enumerate(syn.views.distances):
        outs.append(os.path.join(args.out_dir, f"D_{t}.txt"))
        io.write_matrix(outs[-1], D)
    return [], outs, os.path.join(args.out_dir, "manifest.json")


def cmd_sample(args, s):
    views, files = _load_views(args.distances)
    counts = s["counts"] or [s["count"]] * views.num_views
    if len(counts) != views.num_views:
        raise UsageError(f"--counts needs {views.num_views} entries")
    trips = tuple(sample_triplets(views, t, c, seed=stream_seed(s["seed"], t)) for t, c in enumerate(counts))
    _ensure_parent(args.out)
    io.save_triplets(args.out, TripletDataset(views.num_objects, trips))
    return files, [args.out], args.out + ".manifest.json"


def cmd_split(args, s):
    data = io.load_triplets(args.triplets)
    tr, te = split_train_test(data.triplets, s["test_fraction"], s["seed"], s["equalize"])
    for path, part in ((args.train_out, tr), (args.test_out, te)):
        _ensure_parent(path)
        io.save_triplets(path, data.with_triplets(part))
    return [args.triplets], [args.train_out, args.test_out], args.train_out + ".manifest.json"


def _progress_stream(args):
    if not getattr(args, "progress", None):
        return None
    return sys.stderr if args.progress == "-" else open(args.progress, "w")


def cmd_train(args, s):
    data = _dataset(args)
    cfg = solver_config(s)
    stream = _progress_stream(args)
    try:
        model = train(data, cfg, progress=stream)
    finally:
        if stream not in (None, sys.stderr):
            stream.close()
    io.save_model(args.out, model)
    outs = [os.path.join(args.out, n) for n in ["L.txt"] + [f"M_{t}.txt" for t in range(model.num_views)]]
    outs.append(os.path.join(args.out, io.MODEL_META))
    ins = [args.triplets] + ([args.features] if args.features else [])
    return ins, outs, os.path.join(args.out, "manifest.json")


def cmd_cv(args, s):
    data = _dataset(args)
    res = cross_validate(data, solver_config(s), s["grid"], s["folds"])
    _ensure_parent(args.out)
    io.write_json(args.out, {"best": res.best, "errors": [[c, e] for c, e in res.errors.items()]})
    ins = [args.triplets] + ([args.features] if args.features else [])
    return ins, [args.out], args.out + ".manifest.json"


def cmd_eval(args, s):
    model = io.load_model(args.model)
    test = io.load_triplets(args.test)
    X = io.load_features(args.features) if args.features else None
    te = triplet_error(model, test.triplets, X)
    report = EvalReport(list(te.per_view), te.mean)
    ins = [args.model, args.test] + ([args.features] if args.features else [])
    if args.labels:
        knn = loo_knn_error(model, io.load_labels(args.labels), s["k"], X)
        report.per_view_knn_error, report.mean_knn_error = list(knn.per_view), knn.mean
        ins.append(args.labels)
    if args.consistency:
        dists = [metric_distances(model.L, M, X) for M in model.Ms]
        report.consistency_matrix = consistency_matrix(dists, seed=s["seed"]).tolist()
    _ensure_parent(args.out)
    with open(args.out, "w") as fh:
        fh.write(report.to_json() + "\n")
    return ins, [args.out], args.out + ".manifest.json"


def cmd_consistency(args, s):
    if bool(args.distances) == bool(args.model):
        raise UsageError("give either --distances or --model")
    if args.model:
        model = io.load_model(args.model)
        X = io.load_features(args.features) if args.features else None
        dists = [metric_distances(model.L, M, X) for M in model.Ms]
        ins = [args.model]
    else:
        views, ins = _load_views(args.distances)
        dists = list(views.distances)
    C = consistency_matrix(dists, seed=s["seed"])
    iu = np.triu_indices(len(C), 1)
    avg = float(np.mean(C[iu])) if len(iu[0]) else 1.0
    _ensure_parent(args.out)
    io.write_json(args.out, {"matrix": C.tolist(), "average": avg})
    return ins, [args.out], args.out + ".manifest.json"


def cmd_curve(args, s):
    views, files = _load_views(args.distances)
    X = io.load_features(args.features) if args.features else None
    methods = s["methods"]
    bad = set(methods) - set(MODES)
    if bad:
        raise UsageError(f"unknown methods {sorted(bad)}")
    gammas = None if s["cv_grid"] else s["gamma"]
    seeds = [stream_seed(s["seed"], r) for r in range(s["repeats"])]
    res = run_curve(
        views,
        s["budgets"],
        methods,
        solver_config({**s, "gamma": 1.0}),
        seeds=seeds,
        test_per_view=s["test_count"],
        sweep_views=s["sweep_views"],
        fixed_budget=s["fixed_budget"],
        gammas=gammas,
        cv_grid=s["cv_grid"],
        features=X,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    outs = []
    for m in methods:
        outs.append(os.path.join(args.out_dir, f"curve_{m}.csv"))
        write_curve_csv(outs[-1], res.rows(m))
    if "independent" in methods and len(res.budgets) > 1:
        outs.append(os.path.join(args.out_dir, "gains.json"))
        io.write_json(outs[-1], res.gains())
    return files, outs, os.path.join(args.out_dir, "manifest.json")


def cmd_pca(args, s):
    X = io.load_features(args.features)
    pca = pca_fit(X, variance=s["variance"], n_components=s["components"])
    pairs = [(args.features, args.out)] + [tuple(p) for p in (args.also or [])]
    for src, dst in pairs:
        _ensure_parent(dst)
        io.save_features(dst, pca.transform(X if src == args.features else io.load_features(src)))
    return [p[0] for p in pairs], [p[1] for p in pairs], args.out + ".manifest.json"


def cmd_procrustes(args, s):
    lm = io.load_landmarks(args.landmarks, args.subsets)
    names = s["views"] or list(lm.view_subsets)
    missing = set(names) - set(lm.view_subsets)
    if missing:
        raise UsageError(f"unknown views {sorted(missing)}")
    gt = landmark_views(lm, names)
    os.makedirs(args.out_dir, exist_ok=True)
    outs = []
    for t, D in enumerate(gt.distances):
        outs.append(os.path.join(args.out_dir, f"D_{t}.txt"))
        io.write_matrix(outs[-1], D)
    outs.append(os.path.join(args.out_dir, "views.json"))
    io.write_json(outs[-1], {"views": names})
    ins = [args.landmarks] + ([args.subsets] if args.subsets else [])
    return ins, outs, os.path.join(args.out_dir, "manifest.json")


def cmd_broadcast(args, s):
    """Partitions file: JSON list of ``{"target", "similar", "dissimilar", "view"?}``."""
    raw = io.read_json(args.partitions)
    if not isinstance(raw, list):
        raise UsageError("partitions file must hold a JSON list")
    per_view = {}
    for entry in raw:
        try:
            rows = partition_to_triplets(entry["target"], entry["similar"], entry["dissimilar"])
            per_view.setdefault(int(entry.get("view", 0)), []).append(rows)
        except (KeyError, TypeError) as exc:
            raise io.DataFormatError(args.partitions, 0, f"bad partition entry: {exc}") from None
    T = max(s["num_views"] or 0, 1 + max(per_view, default=-1))
    trips = tuple(
        np.concatenate(per_view[t]) if t in per_view else np.zeros((0, 3), dtype=np.int64) for t in range(T)
    )
    N = s["num_objects"] or 1 + max((int(a.max()) for a in trips if a.size), default=2)
    _ensure_parent(args.out)
    io.save_triplets(args.out, TripletDataset(N, trips))
    return [args.partitions], [args.out], args.out + ".manifest.json"


def cmd_supervised(args, s):
    def tasks_from(pairs, fit):
        out = []
        for feat, lab in pairs:
            if fit:
                out.append(
                    SupervisedTask(
                        io.load_features(feat), io.load_labels(lab), kappa=s["kappa"], max_triplets=s["max_triplets"]
                    )
                )
            else:
                out.append((io.load_features(feat), io.load_labels(lab)))
        return out

    tasks = tasks_from(args.task, True)
    model = train_supervised(tasks, solver_config(s).replace(mode="joint"), mu=s["mu"])
    io.save_model(args.out, model)
    outs = [os.path.join(args.out, n) for n in ["L.txt"] + [f"M_{t}.txt" for t in range(model.num_views)]]
    outs.append(os.path.join(args.out, io.MODEL_META))
    ins = [p for pair in args.task for p in pair]
    if args.eval:
        evals = tasks_from(args.eval, False)
        if len(evals) != len(tasks):
            raise UsageError("--eval needs one feature/label pair per --task")
        report = {}
        for pool in ("task", "all"):
            errs = [
                knn_classify(model, t, Xq, pool_for(tasks, t, pool), s["k"], yq).error
                for t, (Xq, yq) in enumerate(evals)
            ]
            report[pool] = {"per_task": errs, "mean": float(np.mean(errs))}
        outs.append(os.path.join(args.out, "knn_report.json"))
        io.write_json(outs[-1], report)
        ins += [p for pair in args.eval for p in pair]
    return ins, outs, os.path.join(args.out, "manifest.json")


# ---------------------------------------------------------------------------
# parser


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    for flag, dest, typ in SOLVER_FLAGS:
        g.add_argument(flag, dest=dest, type=typ, default=None)
    for flag, dest in SOLVER_SWITCHES:
        g.add_argument(flag, dest=dest, action="store_const", const=True, default=None)


COMMANDS = {}


def _command(sub, name, func, defaults, help_text, solver=False):
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.add_argument("--config", help="JSON file of settings (overridden by flags)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="worker cap for parallel kernels")
    p.add_argument(
        "--deterministic", action="store_const", const=True, default=None, help="sequential, fixed-order reductions"
    )
    p.add_argument("--manifest", help="manifest path (default: next to the outputs)")
    if solver:
        _add_solver_flags(p)
        defaults = {**_solver_defaults(), **defaults}
    COMMANDS[name] = (func, _snapshot_defaults(defaults))
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="jointmetric", description="Multi-view metric learning from triplets.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = _command(
        sub,
        "generate",
        cmd_generate,
        {
            "kind": "clustered",
            "n": 200,
            "input_dim": 10,
            "subspace_dims": [2, 3, 4, 5, 6, 7],
            "clusters": 4,
            "variance": 1.0,
            "box_side": 10.0,
        },
        "generate a synthetic dataset with per-view distance matrices",
    )
    p.add_argument("--kind", choices=("uniform", "clustered"), default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--input-dim", dest="input_dim", type=int, default=None)
    p.add_argument("--subspace-dims", dest="subspace_dims", type=_int_list, default=None)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--variance", type=float, default=None)
    p.add_argument("--box-side", dest="box_side", type=float, default=None)
    p.add_argument("--out-dir", required=True)

    p = _command(sub, "sample", cmd_sample, {"count": 1000, "counts": None}, "sample oriented triplets per view")
    p.add_argument("--distances", nargs="+", required=True, help="D_t.txt files or a directory of them")
    p.add_argument("--count", type=int, default=None, help="triplets per view")
    p.add_argument("--counts", type=_int_list, default=None, help="per-view counts, comma-separated")
    p.add_argument("--out", required=True)

    p = _command(
        sub, "split", cmd_split, {"test_fraction": 0.2, "equalize": False}, "split triplets into train and test"
    )
    p.add_argument("--triplets", required=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=None)
    p.add_argument("--equalize", action="store_const", const=True, default=None)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)

    p = _command(sub, "train", cmd_train, {}, "train a joint, independent or pooled model", solver=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--features")
    p.add_argument("--progress", help="file for per-iteration records ('-' for stderr)")
    p.add_argument("--out", required=True, help="model directory")

    p = _command(
        sub,
        "cv",
        cmd_cv,
        {"grid": list(DEFAULT_GRID), "folds": 5},
        "choose the regularization product by cross-validation",
        solver=True,
    )
    p.add_argument("--triplets", required=True)
    p.add_argument("--features")
    p.add_argument("--grid", type=_float_list, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--out", required=True)

    p = _command(sub, "eval", cmd_eval, {"k": 3}, "score a model on test triplets (and labels)")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--features")
    p.add_argument("--labels", help="labels for leave-one-out k-NN error")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--consistency", action="store_true", help="add the learned views' consistency matrix")
    p.add_argument("--out", required=True)

    p = _command(sub, "consistency", cmd_consistency, {}, "pairwise triplet consistency between views")
    p.add_argument("--distances", nargs="+")
    p.add_argument("--model")
    p.add_argument("--features")
    p.add_argument("--out", required=True)

    p = _command(
        sub,
        "curve",
        cmd_curve,
        {
            "budgets": [100, 300, 1000],
            "methods": list(MODES),
            "sweep_views": None,
            "fixed_budget": None,
            "test_count": 1000,
            "repeats": 1,
            "cv_grid": None,
        },
        "learning curves of test error versus training budget",
        solver=True,
    )
    p.add_argument("--distances", nargs="+", required=True)
    p.add_argument("--features")
    p.add_argument("--budgets", type=_int_list, default=None, help="per-view training budgets")
    p.add_argument("--methods", type=lambda t: t.split(","), default=None)
    p.add_argument("--sweep-views", dest="sweep_views", type=_int_list, default=None)
    p.add_argument("--fixed-budget", dest="fixed_budget", type=int, default=None, help="budget of unswept views")
    p.add_argument("--test-count", dest="test_count", type=int, default=None, help="test triplets per view")
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--cv-grid", dest="cv_grid", type=_float_list, default=None)
    # --gamma here also accepts per-method values, e.g. joint=0.01,pooled=1
    for action in p._actions:
        if action.dest == "gamma":
            action.type = _gamma_spec
    p.add_argument("--out-dir", required=True)

    p = _command(sub, "pca", cmd_pca, {"variance": 0.99, "components": None}, "project features onto principal axes")
    p.add_argument("--features", required=True)
    p.add_argument("--variance", type=float, default=None)
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--also", nargs=2, action="append", metavar=("IN", "OUT"), help="transform another file")
    p.add_argument("--out", required=True)

    p = _command(sub, "procrustes", cmd_procrustes, {"views": None}, "landmark views to distance matrices")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--subsets", help="JSON view-subset config (default: airplane views)")
    p.add_argument("--views", type=lambda t: t.split(","), default=None)
    p.add_argument("--out-dir", required=True)

    p = _command(
        sub, "broadcast", cmd_broadcast, {"num_objects": None, "num_views": None}, "partitions to triplets"
    )
    p.add_argument("--partitions", required=True)
    p.add_argument("--num-objects", dest="num_objects", type=int, default=None)
    p.add_argument("--num-views", dest="num_views", type=int, default=None)
    p.add_argument("--out", required=True)

    p = _command(
        sub,
        "supervised",
        cmd_supervised,
        {"kappa": 3, "mu": 1.0, "max_triplets": None, "k": 3},
        "learn task metrics from features and class labels",
        solver=True,
    )
    p.add_argument("--task", nargs=2, action="append", required=True, metavar=("FEATURES", "LABELS"))
    p.add_argument("--eval", nargs=2, action="append", metavar=("FEATURES", "LABELS"))
    p.add_argument("--kappa", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--max-triplets", dest="max_triplets", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="rerun a recorded manifest", description="rerun a recorded manifest")
    p.add_argument("manifest")
    return parser


def _run(argv, replayed=None):
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "replay":
        meta = io.read_json(args.manifest)
        return _run(meta["argv"], replayed=meta["settings"])
    func, defaults = COMMANDS[args.command]
    settings = resolve_settings(args, defaults, replayed)
    if settings.get("deterministic"):
        settings["threads"] = 1
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    inputs, outputs, manifest = func(args, settings)
    write_manifest(
        args.manifest or manifest, args.command, argv, settings, inputs, outputs, started, time.perf_counter() - t0
    )
    return EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return _run(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (JointMetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
