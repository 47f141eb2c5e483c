"""Command-line pipeline: generate, spectra, unsupervised, train, interpret, ablate.

Every subcommand accepts ``--config FILE.json`` whose keys are the long option
names with dashes replaced by underscores; explicit flags win over the file.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, ccnn, datagen, dataio, interpret, spectral, training, unsupervised
from .core import Lattice, ParameterPoint
from .errors import DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# defaults live here so that config files can fill anything left unset
DEFAULTS = {
    "seed": 0, "n_snapshots": 250, "lattice": 13, "p_flip": 0.03, "q": datagen.DEFAULT_Q,
    "edge_fidelity": datagen.DEFAULT_EDGE_FIDELITY, "plan": "six_phase",
    "K": spectral.DEFAULT_K, "n_pca": 10, "clusters": 6, "patience": unsupervised.RESTART_PATIENCE,
    "order": 3, "filters": 3, "filter_size": 3, "uniform_w": False, "nonneg_beta": False,
    "gamma": 0.1, "epochs": 100, "lr0": 0.01, "batch_size": 128, "val_fraction": 0.1,
    "threshold": interpret.DEFAULT_THRESHOLD, "folds": 10, "seeds": 5, "variants": "all",
    "train_points": None, "motif": None,
}


def _add_common(p, *names):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--seed", type=int)
    for n in names:
        {
            "manifest": lambda: p.add_argument("--manifest", help="dataset manifest.json"),
            "out": lambda: p.add_argument("--out", help="output directory"),
            "K": lambda: p.add_argument("--K", type=int, help="k-points per axis"),
        }[n]()


def _arch_args(p):
    p.add_argument("--phase", help="target phase name")
    p.add_argument("--order", type=int, choices=(2, 3), help="highest correlator order")
    p.add_argument("--filters", type=int, help="number of filters")
    p.add_argument("--filter-size", type=int)
    p.add_argument("--uniform-w", action="store_const", const=True)
    p.add_argument("--nonneg-beta", action="store_const", const=True)
    p.add_argument("--gamma", type=float, help="L1 coefficient on filters")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--train-points", help="JSON: phase -> list of [delta, rb]")


def build_parser():
    parser = _Parser(prog="hybrid-ccnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="render a synthetic dataset")
    _add_common(p, "out")
    p.add_argument("--plan", help="six_phase, two_phase or a plan JSON file")
    p.add_argument("--n-snapshots", type=int)
    p.add_argument("--lattice", type=int)
    p.add_argument("--p-flip", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--edge-fidelity", type=float)

    p = sub.add_parser("spectra", help="mean power spectra and shift-invariant features")
    _add_common(p, "manifest", "out", "K")

    p = sub.add_parser("unsupervised", help="PCA + GMM clustering of parameter points")
    _add_common(p, "manifest", "out", "K")
    p.add_argument("--n-pca", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--patience", type=int)

    p = sub.add_parser("train", help="train one phase classifier")
    _add_common(p, "manifest")
    _arch_args(p)
    p.add_argument("--train-manifest", dest="manifest", help="alias of --manifest")
    p.add_argument("--out-checkpoint")

    p = sub.add_parser("interpret", help="confidence maps, phase diagram, Fourier maps, correlators")
    _add_common(p, "manifest", "out", "K")
    p.add_argument("--checkpoints", nargs="+")
    p.add_argument("--threshold", type=float)
    p.add_argument("--motif", help="three offsets as JSON, e.g. [[0,0],[5,4],[5,-4]]")

    p = sub.add_parser("ablate", help="cross-validated architecture variants")
    _add_common(p, "manifest", "out")
    _arch_args(p)
    p.add_argument("--variants", help="'all' or comma-separated row indices (0-based)")
    p.add_argument("--folds", type=int)
    p.add_argument("--seeds", type=int)
    return parser


def resolve(args) -> dict:
    """Merge defaults, the config file and explicit flags (in increasing priority)."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise DataError(f"{args.config}: cannot read config ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
        opts.update(cfg)
    for k, v in vars(args).items():
        if v is not None and k != "config":
            opts[k] = v
    return opts


# where results go does not change them, so these stay out of the config hash
_UNHASHED = {"command", "config", "out", "out_checkpoint"}


def _prov(opts):
    keyed = {k: v for k, v in opts.items() if k not in _UNHASHED}
    return dataio.provenance(keyed, opts.get("seed"))


def _require(opts, *keys):
    for k in keys:
        if not opts.get(k):
            raise UsageError(f"missing required option --{k.replace('_', '-')}")


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


# ------------------------------------------------------------- commands

def _load_plan(opts) -> datagen.GenerationPlan:
    plan = opts["plan"]
    if plan == "six_phase":
        return datagen.six_phase_plan(opts["p_flip"], opts["q"], opts["edge_fidelity"])
    if plan == "two_phase":
        return datagen.two_phase_plan(opts["p_flip"])
    try:
        spec = json.loads(Path(plan).read_text())
    except OSError as exc:
        raise DataError(f"{plan}: cannot read plan ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{plan}: invalid JSON ({exc})") from exc
    return plan_from_json(spec, opts)


def plan_from_json(spec: dict, opts=None) -> datagen.GenerationPlan:
    """Plan file: ``{"phases": {name: {...}}, "points": [{"delta", "rb", "phase"}]}``.

    Built-in phase names may be used without a ``phases`` entry.
    """
    opts = opts or DEFAULTS
    specs = datagen.six_phase_specs(opts["p_flip"], opts["q"], opts["edge_fidelity"])
    for name, d in spec.get("phases", {}).items():
        d = dict(d)
        mode = d.pop("mode", "tile")
        noise = datagen.NoiseModel(d.pop("p_flip", opts["p_flip"]))
        tile = d.pop("tile", None)
        if mode == "tile":
            tile = datagen.Tile(np.array(tile)) if tile is not None else datagen.ideal_tile(name, d.get("q", opts["q"]))
        specs[name] = datagen.PhaseSpec(name, mode, tile, noise, **d)
    points = []
    for e in spec.get("points", []):
        if e["phase"] not in specs:
            raise DataError(f"plan references unknown phase {e['phase']!r}")
        points.append((ParameterPoint(float(e["delta"]), float(e["rb"])), specs[e["phase"]]))
    grid = np.asarray(spec["grid"]) if spec.get("grid") is not None else None
    return datagen.GenerationPlan(points, grid)


def cmd_generate(opts):
    _require(opts, "out")
    plan = _load_plan(opts)
    ds = datagen.generate_dataset(plan, Lattice.square(int(opts["lattice"])), int(opts["n_snapshots"]),
                                  int(opts["seed"]))
    prov = _prov(opts)
    out = Path(opts["out"])
    dataio.save_dataset(ds, out, prov)
    dataio.save_ground_truth(ds, out / "truth.json")
    print(f"wrote {len(ds)} snapshot sets to {out}")


def _load(opts):
    _require(opts, "manifest")
    return dataio.load_dataset(opts["manifest"])


def cmd_spectra(opts):
    _require(opts, "out")
    ds = _load(opts)
    K = int(opts["K"])
    prov = _prov(opts)
    out = Path(opts["out"])
    for i, s in enumerate(ds.sets):
        spec = spectral.mean_power_spectrum(s, K)
        dataio.write_csv(out / f"spectrum_{i:04d}.csv", spectral.SPECTRUM_HEADER, spectral.spectrum_rows(spec), prov)
        dataio.write_csv(out / f"features_{i:04d}.csv", spectral.SPECTRUM_HEADER,
                         spectral.spectrum_rows(spectral.shift_invariant_features(spec)), prov)
    print(f"wrote spectra for {len(ds)} sets to {out}")


def cmd_unsupervised(opts):
    _require(opts, "out")
    ds = _load(opts)
    K = int(opts["K"])
    res = unsupervised.cluster_phase_diagram(ds, K, int(opts["n_pca"]), int(opts["clusters"]),
                                             int(opts["seed"]), int(opts["patience"]))
    prov = _prov(opts)
    out = Path(opts["out"])
    n_pc = res.pca.n_components if res.pca is not None else 0
    for c in range(n_pc):
        grid = res.pca.components[c].reshape(K, K)
        dataio.write_csv(out / f"pc{c + 1}.csv", spectral.SPECTRUM_HEADER, spectral.spectrum_rows(grid), prov)
    rows = []
    for i, s in enumerate(ds.sets):
        r, c = ds.grid_position(i)
        pcs = list(res.projections[i]) if res.projections is not None else []
        rows.append([r, c, s.point.delta_over_omega, s.point.rb_over_a] + pcs + [int(res.labels[i])])
    header = ["row", "col", "delta", "rb"] + [f"pc{c + 1}" for c in range(n_pc)] + ["label"]
    dataio.write_csv(out / "projections.csv", header, rows, prov)
    summary = {"provenance": prov, "n_points": len(ds), "labels": res.labels.tolist()}
    if res.gmm is not None:
        summary["log_likelihood"] = res.gmm.log_likelihood
        summary["bic"] = unsupervised.bic(res.gmm, len(ds))
        summary["explained_variance_ratio"] = res.pca.explained_variance_ratio.tolist()
    if ds.truth is not None:
        summary["purity"] = unsupervised.purity(res.labels, ds.truth)
    _write_json(out / "summary.json", summary)
    print(f"clustered {len(ds)} points into {len(set(res.labels.tolist()))} clusters")


def _train_points(opts):
    tp = opts.get("train_points")
    if tp is None:
        return training.DEFAULT_TRAINING_POINTS
    if isinstance(tp, str):
        try:
            tp = json.loads(Path(tp).read_text())
        except OSError as exc:
            raise DataError(f"{tp}: cannot read training points ({exc.strerror})") from exc
    return {k: [tuple(p) for p in v] for k, v in tp.items()}


def _train_config(opts):
    return training.TrainConfig(
        lr0=float(opts["lr0"]), batch_size=int(opts["batch_size"]), gamma=float(opts["gamma"]),
        epochs=int(opts["epochs"]), seed=int(opts["seed"]), val_fraction=float(opts["val_fraction"]),
        order=int(opts["order"]), n_filters=int(opts["filters"]), filter_size=int(opts["filter_size"]),
        uniform_w=bool(opts["uniform_w"]), nonneg_beta=bool(opts["nonneg_beta"]))


def _pool(opts, ds):
    _require(opts, "phase")
    points = _train_points(opts)
    if opts["phase"] not in points:
        raise DataError(f"phase {opts['phase']!r} has no training points")
    return training.build_pool(ds, points, opts["phase"])


def cmd_train(opts):
    _require(opts, "out_checkpoint")
    ds = _load(opts)
    cfg = _train_config(opts)
    model, report = training.train(_pool(opts, ds), cfg)
    prov = _prov(opts)
    path = Path(opts["out_checkpoint"])
    path.parent.mkdir(parents=True, exist_ok=True)
    ccnn.save_checkpoint(model, path, prov)
    _write_json(path.with_suffix(".report.json"),
                {"provenance": prov, "loss": report.loss, "val_accuracy": report.val_accuracy,
                 "lr": report.lr, "steps_per_epoch": report.steps_per_epoch,
                 "final_val_accuracy": report.final_val_accuracy})
    print(f"{opts['phase']}: validation accuracy {report.final_val_accuracy:.4f}")


def cmd_interpret(opts):
    _require(opts, "out", "checkpoints")
    ds = _load(opts)
    prov = _prov(opts)
    out = Path(opts["out"])
    L = ds.sets[0].lattice.height
    maps, rows = [], []
    for cp in opts["checkpoints"]:
        model = ccnn.load_checkpoint(cp)
        if model.config.lattice_size != L:
            raise DataError(f"{cp}: model lattice {model.config.lattice_size} does not match dataset {L}")
        name = model.metadata.get("target", Path(cp).stem)
        cm = interpret.confidence_map(model, ds)
        maps.append((name, cm))
        rows += [[p.delta_over_omega, p.rb_over_a, name, float(v)] for p, v in zip(cm.points, cm.values)]
        if model.config.order == 2 and model.config.uniform_w:
            op = interpret.fourier_order_parameter(model, int(opts["K"]))
            dataio.write_csv(out / f"fourier_{name}.csv", spectral.SPECTRUM_HEADER,
                             spectral.spectrum_rows(op.weights), prov)
    dataio.write_csv(out / "confidence.csv", ["delta", "rb", "phase", "yhat"], rows, prov)
    pd = interpret.phase_diagram(maps, float(opts["threshold"]))
    dataio.write_csv(out / "phase_diagram.csv", ["delta", "rb", "phases"],
                     [[p.delta_over_omega, p.rb_over_a, n] for p, n in zip(pd.points, pd.names())], prov)
    summary = {"provenance": prov, "threshold": pd.threshold}
    if ds.truth is not None:
        summary["agreement"] = interpret.diagram_agreement(pd, ds.truth, [n for n, _ in maps])
    if opts.get("motif"):
        motif = json.loads(opts["motif"]) if isinstance(opts["motif"], str) else opts["motif"]
        summary["sign_decomposition"] = [
            dict(interpret.sign_decomposition(s, motif).as_dict(),
                 delta=s.point.delta_over_omega, rb=s.point.rb_over_a) for s in ds.sets]
    _write_json(out / "interpret.json", summary)
    print(f"wrote interpretation for {len(maps)} models to {out}")


def cmd_ablate(opts):
    _require(opts, "out")
    ds = _load(opts)
    pool = _pool(opts, ds)
    if opts["variants"] == "all":
        variants = list(training.TABLE_VARIANTS)
    else:
        try:
            variants = [training.TABLE_VARIANTS[int(i)] for i in str(opts["variants"]).split(",")]
        except (ValueError, IndexError) as exc:
            raise UsageError(f"invalid --variants {opts['variants']!r}") from exc
    rows = training.ablation_suite(pool, variants, _train_config(opts), int(opts["folds"]), int(opts["seeds"]))
    prov = _prov(opts)
    dataio.write_csv(Path(opts["out"]) / "ablation.csv", ["variant", "mean", "stderr", "formatted"],
                     [[v.name, r.mean, r.stderr, r.formatted()] for v, r in rows], prov)
    for v, r in rows:
        print(f"{v.name}: {r.formatted()}")


COMMANDS = {"generate": cmd_generate, "spectra": cmd_spectra, "unsupervised": cmd_unsupervised,
            "train": cmd_train, "interpret": cmd_interpret, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        opts = resolve(args)
        COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError, TypeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
