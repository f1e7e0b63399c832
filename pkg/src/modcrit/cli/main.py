"""``modcrit`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible computation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .. import __version__
from ..criticality import ConstraintEstimator, SearchConfig, criticality_curve, joint_criticality
from ..datasets import LabeledDataset
from ..landscape import ALL, METRICS, path_sweep, rewind_grid, valley_sample
from ..measures import (
    MEASURES,
    UndefinedSimilarity,
    cka_rewind_table,
    is_constant,
    kendall_tau,
    measure_report,
    pac_bayes_inputs,
    pac_bayes_terms,
)
from ..nngraph import TrainingDiverged, sgd_train
from ..numerics import RngStream, conv_singular_values
from .archive import Archive, ArchiveError, load_archive, save_archive
from .config import SEARCH_STREAM, SUBSAMPLE_STREAM, VALLEY_STREAM, ConfigError, ExperimentConfig, config_hash, resolve_output
from .csvio import NA, read_csv, write_csv

log = logging.getLogger("modcrit")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which is reserved
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- helpers


@dataclass
class Loaded:
    archive: Archive
    config: ExperimentConfig | None

    @property
    def graph(self):
        return self.archive.graph

    @property
    def store(self):
        return self.archive.store

    def data(self) -> LabeledDataset:
        if self.config is None:
            raise UsageError(f"{self.archive.path} has no experiment config; cannot rebuild its dataset")
        return self.config.build_dataset()

    def meta(self, **extra: Any) -> dict[str, Any]:
        seed = self.config.seed if self.config else self.store.metadata.get("seed")
        return {"config_hash": self.archive.config_hash, "seed": seed, "archive": str(self.archive.path), **extra}


def _load(path: str) -> Loaded:
    try:
        archive = load_archive(path)
    except ArchiveError as exc:
        raise UsageError(str(exc)) from None
    cfg = ExperimentConfig.from_dict(archive.config) if archive.config else None
    return Loaded(archive, cfg)


def _check_module(graph, module_id: str) -> None:
    if module_id not in graph.module_ids:
        raise UsageError(f"unknown module {module_id!r}; valid module ids: {', '.join(graph.module_ids)}")


def _out(args, loaded: Loaded | None, default_name: str) -> Path:
    if args.out:
        return resolve_output(args.out)
    if loaded is None:
        return resolve_output(default_name)
    return loaded.archive.path.parent / default_name


def _search_config(args, loaded: Loaded) -> tuple[SearchConfig, int, int | None]:
    spec = loaded.config.search if loaded.config else None
    pick = lambda flag, attr, fallback: flag if flag is not None else (getattr(spec, attr) if spec else fallback)  # noqa: E731
    n_alpha = pick(args.alpha_grid, "n_alpha", 21)
    n_sigma = pick(args.sigma_grid, "n_sigma", 13)
    sigma_min = pick(args.sigma_min, "sigma_min", 1e-3)
    alphas, sigmas = SearchConfig.grids(n_alpha, n_sigma, sigma_min)
    eps = args.epsilon[0] if args.epsilon else pick(None, "epsilon", 0.1)
    cfg = SearchConfig(alphas, sigmas, eps, pick(args.mc, "n_mc", 64), pick(args.slack, "slack", 1.0))
    seed = args.seed
    if seed is None and spec is not None:
        seed = spec.seed if spec.seed is not None else loaded.config.seed
    if seed is None:
        seed = 0
    sub = pick(args.train_subsample, "train_subsample", None)
    return cfg, seed, sub


def _criticality_data(loaded: Loaded, seed: int, subsample: int | None) -> LabeledDataset:
    data = loaded.data()
    if subsample:
        data = data.subsample_train(subsample, RngStream(seed, (SUBSAMPLE_STREAM,)))
    return data


def _print_table(columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> None:
    def fmt(v):
        if v is None:
            return NA
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    print("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    for row in cells:
        print("  ".join(v.rjust(w) for v, w in zip(row, widths)))


# --------------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = resolve_output(args.output) if args.output else cfg.output_path()
    data = cfg.build_dataset()
    graph = cfg.build_graph(data)
    chash = cfg.config_hash()
    try:
        result = sgd_train(graph, data.train, cfg.optimizer, cfg.snapshot_epochs, cfg.train_rng(), test=data.test)
    except TrainingDiverged as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    save_archive(result.store, out / "archive", cfg.to_dict(), chash)
    rows = [r.__dict__ for r in result.log]
    write_csv(
        out / "training_log.csv",
        ["epoch", "lr", "train_loss", "train_error", "test_error"],
        rows,
        {"config_hash": chash, "seed": cfg.seed, "name": cfg.name},
    )
    last = result.log[-1]
    print(f"trained {cfg.name}: epoch {last.epoch} train_error {last.train_error:.4f} -> {out / 'archive'}")
    return EXIT_OK


def cmd_rewind(args) -> int:
    loaded = _load(args.archive)
    grid = rewind_grid(loaded.graph, loaded.store, loaded.data(), args.metric)
    out = write_csv(
        _out(args, loaded, "rewind.csv"),
        ["module", "epoch", "metric", "value", "baseline"],
        grid.rows(),
        loaded.meta(metric=args.metric, epochs=grid.epochs),
    )
    print(out)
    return EXIT_OK


def cmd_path(args) -> int:
    loaded = _load(args.archive)
    if args.module != ALL:
        _check_module(loaded.graph, args.module)
    alphas = [float(a) for a in np.linspace(0.0, 1.0, args.alphas)]
    curve = path_sweep(loaded.graph, loaded.store, args.module, alphas, loaded.data(), METRICS)
    out = write_csv(
        _out(args, loaded, f"path_{args.module}.csv"),
        ["selector", "alpha", *METRICS],
        curve.rows(),
        loaded.meta(alphas=alphas),
    )
    print(out)
    return EXIT_OK


def cmd_valley(args) -> int:
    loaded = _load(args.archive)
    _check_module(loaded.graph, args.module)
    seed = args.seed if args.seed is not None else loaded.meta()["seed"] or 0
    alphas = [float(a) for a in np.linspace(0.0, 1.0, args.alphas)]
    rng = RngStream(seed, (VALLEY_STREAM,))
    sample = valley_sample(loaded.graph, loaded.store, args.module, alphas, args.noise, args.sigma, loaded.data(), rng)
    out = write_csv(
        _out(args, loaded, f"valley_{args.module}.csv"),
        ["module", "sigma", "alpha", "draw", "x", "y", "loss"],
        sample.rows(),
        loaded.meta(seed=seed, sigma=args.sigma, alphas=alphas, noise_per_alpha=args.noise),
    )
    print(out)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    rows = []
    if args.kernel:
        if args.input_size is None:
            raise UsageError("--kernel needs --input-size")
        kernel = np.load(args.kernel)
        if kernel.ndim == 2:
            kernel = kernel[None, None]
        sv = conv_singular_values(kernel, args.input_size)
        rows = [{"module": "kernel", "epoch": NA, "index": i, "singular_value": v} for i, v in enumerate(sv)]
        loaded, meta = None, {"kernel": args.kernel, "input_size": args.input_size}
    else:
        if not args.archive:
            raise UsageError("give an archive or --kernel")
        loaded = _load(args.archive)
        modules = [args.module] if args.module else loaded.graph.module_ids
        for m in modules:
            _check_module(loaded.graph, m)
        epoch = loaded.store.final_epoch if args.epoch is None else args.epoch
        for m in modules:
            w = loaded.store.module(m, epoch)["weight"]
            node = loaded.graph.node(m)
            if node.kind == "conv2d":
                sv = conv_singular_values(w, loaded.graph.input_shape_of(m)[-1])
            else:
                sv = np.linalg.svd(w, compute_uv=False)
            rows += [{"module": m, "epoch": epoch, "index": i, "singular_value": v} for i, v in enumerate(sv)]
        meta = loaded.meta(epoch=epoch)
    out = write_csv(_out(args, loaded, "spectrum.csv"), ["module", "epoch", "index", "singular_value"], rows, meta)
    print(out)
    return EXIT_OK


def cmd_cka(args) -> int:
    loaded = _load(args.archive)
    _check_module(loaded.graph, args.module)
    probes = args.probes or [n.id for n in loaded.graph.nodes]
    for p in probes:
        if p not in {n.id for n in loaded.graph.nodes}:
            raise UsageError(f"unknown probe node {p!r}; valid node ids: {', '.join(n.id for n in loaded.graph.nodes)}")
    epochs = args.epochs or loaded.store.epochs
    data = loaded.data()
    if args.n_samples and args.n_samples < len(data.train):
        data = data.subsample_train(args.n_samples, RngStream(loaded.meta()["seed"] or 0, (SUBSAMPLE_STREAM,)))
    rows = []
    for e in epochs:
        if e not in loaded.store:
            raise UsageError(f"no snapshot for epoch {e}; available: {loaded.store.epochs}")
        for p in probes:
            try:
                value = cka_rewind_table(loaded.graph, loaded.store, args.module, e, data, [p])[p]
            except UndefinedSimilarity:
                value = None
            rows.append({"module": args.module, "epoch": e, "probe": p, "cka": value})
    out = write_csv(
        _out(args, loaded, f"cka_{args.module}.csv"),
        ["module", "epoch", "probe", "cka"],
        rows,
        loaded.meta(n_samples=len(data.train)),
    )
    print(out)
    return EXIT_OK


def cmd_criticality(args) -> int:
    loaded = _load(args.archive)
    cfg, seed, sub = _search_config(args, loaded)
    epsilons = sorted(args.epsilon) if args.epsilon else [cfg.epsilon]
    data = _criticality_data(loaded, seed, sub)
    rng = RngStream(seed, (SEARCH_STREAM,))
    est = ConstraintEstimator(loaded.graph, loaded.store, data, rng, cfg.n_mc)
    curve = criticality_curve(loaded.graph, loaded.store, cfg, epsilons, None, None, est)
    meta = loaded.meta(
        seed=seed,
        epsilons=epsilons,
        alphas=list(cfg.alphas),
        sigmas=list(cfg.sigmas),
        n_mc=cfg.n_mc,
        slack=cfg.slack,
        train_samples=len(data.train),
    )
    rows = []
    for pt in curve:
        for m, r in pt.network.modules.items():
            e = r.estimate
            rows.append(
                {
                    "epsilon": pt.epsilon,
                    "module": m,
                    "distance_sq": r.distance_sq,
                    "feasible": r.feasible,
                    "alpha": r.alpha,
                    "sigma": r.sigma,
                    "mu": r.mu,
                    "loss_mean": e.mean if e else None,
                    "loss_stderr": e.stderr if e else None,
                    "n_mc": cfg.n_mc,
                    "seed": seed,
                }
            )
        rows.append(
            {"epsilon": pt.epsilon, "module": "NETWORK", "feasible": pt.network.feasible, "mu": pt.mu_net, "n_mc": cfg.n_mc, "seed": seed}
        )
        if args.joint:
            j = joint_criticality(loaded.graph, loaded.store, cfg.with_epsilon(pt.epsilon), None, None, est, start=pt.network)
            row = {"epsilon": pt.epsilon, "module": "JOINT", "feasible": j.feasible, "mu": j.mu_prime, "n_mc": cfg.n_mc, "seed": seed}
            if j.feasible:
                row.update(loss_mean=j.estimate.mean, loss_stderr=j.estimate.stderr)
                inputs = pac_bayes_inputs(loaded.graph, loaded.store, j.alpha, j.sigma, len(data.train), args.delta)
                terms = pac_bayes_terms(inputs, j.estimate.mean)
                row.update(pac_bayes_bound=terms["bound"], pac_bayes_bound_expanded=terms["bound_expanded"])
            rows.append(row)
    cols = ["epsilon", "module", "distance_sq", "feasible", "alpha", "sigma", "mu", "loss_mean", "loss_stderr", "n_mc", "seed"]
    if args.joint:
        cols += ["pac_bayes_bound", "pac_bayes_bound_expanded"]
        meta["delta"] = args.delta
    out = write_csv(_out(args, loaded, "criticality.csv"), cols, rows, meta)
    curve_path = Path(args.curve_out) if args.curve_out else out.with_name(out.stem + "_curve.csv")
    write_csv(
        resolve_output(curve_path) if args.curve_out else curve_path,
        ["epsilon", "mu_net", "feasible", "infeasible_modules"],
        [{"epsilon": p.epsilon, "mu_net": p.mu_net, "feasible": p.network.feasible, "infeasible_modules": p.network.infeasible} for p in curve],
        meta,
    )
    for p in curve:
        print(f"epsilon {p.epsilon:g}: mu_net {NA if p.mu_net is None else f'{p.mu_net:.6g}'}")
    if any(p.mu_net is None for p in curve):
        log.error("no feasible criticality point for modules: %s", sorted({m for p in curve for m in p.network.infeasible}))
        return EXIT_INFEASIBLE
    return EXIT_OK


def tau_row(rows: Sequence[dict[str, Any]], measures: Sequence[str]) -> dict[str, Any]:
    """Kendall tau of each measure column against GE; None when undefined."""
    ge = [r["GE"] for r in rows]
    out: dict[str, Any] = {"network": "kendall_tau", "GE": None}
    for m in measures:
        col = [r.get(m) for r in rows]
        if any(v is None for v in col + ge) or is_constant(col) or is_constant(ge):
            out[m] = None
        else:
            out[m] = kendall_tau(col, ge)
    return out


def _parse_number(v: str) -> float | None:
    if v is None or v.strip().lower() in ("", NA, "infeasible", "none", "nan"):
        return None
    return float(v)


def cmd_rank(args) -> int:
    rows: list[dict[str, Any]] = []
    meta: dict[str, Any] = {}
    measures = list(MEASURES[1:])
    if args.table:
        tmeta, table = read_csv(args.table)
        if not table or "GE" not in table[0]:
            raise UsageError(f"{args.table} needs a GE column")
        measures = [c for c in table[0] if c not in ("network", "GE")]
        for i, r in enumerate(table):
            rows.append({"network": r.get("network") or f"net{i}", **{k: _parse_number(v) for k, v in r.items() if k != "network"}})
        meta = {"table": args.table}
    loaded = [_load(a) for a in args.archives]
    if loaded:
        identities = []
        for ld in loaded:
            if ld.config is None:
                raise UsageError(f"{ld.archive.path} has no experiment config")
            ident = ld.config.dataset.identity()
            ident["seed"] = ld.config.dataset.seed if ld.config.dataset.seed is not None else ld.config.seed
            identities.append(ident)
        for ld, ident in zip(loaded[1:], identities[1:]):
            if ident != identities[0]:
                diff = sorted(k for k in ident if ident[k] != identities[0].get(k))
                raise UsageError(
                    f"archives use incompatible datasets ({loaded[0].archive.path} vs {ld.archive.path} differ in {diff}); "
                    "measures are only comparable on the same inputs"
                )
        for i, ld in enumerate(loaded):
            cfg, seed, sub = _search_config(args, ld)
            data = ld.data()
            crit = _criticality_data(ld, seed, sub)
            rep = measure_report(
                ld.graph, ld.store, data, cfg, RngStream(seed, (SEARCH_STREAM,)), network_id=f"{i}:{ld.config.name}", criticality_data=crit
            )
            rows.append(rep.row())
            meta = {"epsilon": cfg.epsilon, "alphas": list(cfg.alphas), "sigmas": list(cfg.sigmas), "n_mc": cfg.n_mc, "seed": seed}
        meta["config_hashes"] = [ld.archive.config_hash for ld in loaded]
    if len(rows) < 2:
        raise UsageError("ranking needs at least two networks")
    tau = tau_row(rows, measures)
    extra = ["train_error", "test_error"] if not args.table else []
    cols = ["network", *extra, "GE", *measures]
    meta["kendall_tau"] = "tau-a; tied pairs count toward the denominator only; n/a when a column is constant or missing"
    meta.setdefault("config_hash", config_hash(meta))
    out = write_csv(_out(args, None, "rank.csv"), cols, [*rows, tau], meta)
    _print_table(cols, [*rows, tau])
    print(out)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _search_flags(p: argparse.ArgumentParser, multi_eps: bool) -> None:
    if multi_eps:
        p.add_argument("--epsilon", type=float, nargs="+", help="error thresholds (default from config, else 0.1)")
    else:
        p.add_argument("--epsilon", type=float, nargs=1)
    p.add_argument("--alpha-grid", type=int, help="number of alpha grid points over [0, 1]")
    p.add_argument("--sigma-grid", type=int, help="number of log-spaced sigma grid points up to 1")
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--mc", type=int, help="Monte-Carlo draws per constraint check")
    p.add_argument("--slack", type=float, help="stderr multiplier in the feasibility test")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-subsample", type=int, help="estimate the constraint on this many train samples")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="modcrit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"modcrit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a network and write a snapshot archive")
    p.add_argument("config")
    p.add_argument("--output", help="override output_dir from the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rewind", help="rewind grid: one module at a time back to each snapshot")
    p.add_argument("archive")
    p.add_argument("--metric", default="train_error", choices=METRICS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rewind)

    p = sub.add_parser("path", help="metrics along the convex path from initial to final weights")
    p.add_argument("archive")
    p.add_argument("--module", default=ALL, help=f"module id or {ALL}")
    p.add_argument("--alphas", type=int, default=21)
    p.add_argument("--out")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("valley", help="noisy samples around the convex path of one module")
    p.add_argument("archive")
    p.add_argument("--module", required=True)
    p.add_argument("--alphas", type=int, default=11)
    p.add_argument("--noise", type=int, default=8)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_valley)

    p = sub.add_parser("spectrum", help="singular values of module operators")
    p.add_argument("archive", nargs="?")
    p.add_argument("--module")
    p.add_argument("--epoch", type=int)
    p.add_argument("--kernel", help=".npy kernel [c_out, c_in, q, q] or [q, q] instead of an archive")
    p.add_argument("--input-size", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("cka", help="CKA between the trained net and one with a module rewound")
    p.add_argument("archive")
    p.add_argument("--module", required=True)
    p.add_argument("--epochs", type=int, nargs="+")
    p.add_argument("--probes", nargs="+")
    p.add_argument("--n-samples", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cka)

    p = sub.add_parser("criticality", help="module and network criticality, plus the curve over epsilon")
    p.add_argument("archive")
    _search_flags(p, multi_eps=True)
    p.add_argument("--joint", action="store_true", help="also run the joint search and report the PAC-Bayes bound at its solution")
    p.add_argument("--delta", type=float, default=0.05, help="confidence parameter of the bound")
    p.add_argument("--out")
    p.add_argument("--curve-out")
    p.set_defaults(func=cmd_criticality)

    p = sub.add_parser("rank", help="complexity measures per network and Kendall tau against GE")
    p.add_argument("archives", nargs="*")
    p.add_argument("--table", help="CSV with network, GE and measure columns to rank instead of archives")
    _search_flags(p, multi_eps=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, ArchiveError) as exc:
        print(f"modcrit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
