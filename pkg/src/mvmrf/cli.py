"""Command-line entry point: ``mvmrf {validate,simulate,sample,diagnose,summarize}``.

Exit codes: 0 success, 2 configuration error, 3 data or archive error,
4 convergence warning (outputs are still written), 5 internal error.
Set ``MVMRF_WORKERS`` to run chains in that many processes.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from mvmrf import analysis
from mvmrf.errors import ArchiveFormatError, ConfigError, DataError
from mvmrf.io import (
    RunConfig,
    atomic_write,
    canonical_json,
    load_config,
    load_ensemble,
    parse_condition,
    read_archive,
    simulate_dataset,
    truth_from_spec,
    write_archive,
    write_ensemble,
)
from mvmrf.sampler import PosteriorArchive, run_ensemble_analysis

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE, EXIT_INTERNAL = 0, 2, 3, 4, 5
ARCHIVE_NAME = "archive.mvmrf"
DATASET_NAME = "dataset.csv"

log = logging.getLogger("mvmrf")


class ConvergenceWarning(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=getattr(args, "seed", None), chains=getattr(args, "chains", None),
                              output=getattr(args, "out", None))


def _out_dir(cfg: RunConfig, args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else cfg.resolve(cfg.output)


def _dataset_path(cfg: RunConfig, args) -> Path:
    if getattr(args, "data", None):
        return Path(args.data)
    if cfg.dataset is not None:
        return cfg.resolve(cfg.dataset)
    return _out_dir(cfg, args) / DATASET_NAME


def _archive_path(args) -> Path:
    if args.archive:
        return Path(args.archive)
    if args.out:
        return Path(args.out) / ARCHIVE_NAME
    raise ConfigError("give --archive or --out pointing at a sample run")


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_table(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)] + [",".join(r) for r in rows]
    atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = _config(args)
    lat = cfg.lattice()
    print(f"lattice      {cfg.nx} x {cfg.ny} ({cfg.order}), n = {lat.n}")
    print(f"variables    p = {cfg.p}: {', '.join(cfg.variable_names)}")
    print(f"field dim    {lat.dim}")
    s = cfg.sampler
    print(f"sampler      {s.n_chains} chains, regimes ({s.regime1_iters}, {s.regime2_iters}, "
          f"{s.regime3_iters}), thin {s.thin}, seed {s.seed}")
    path = _dataset_path(cfg, args)
    if path.exists():
        data = load_ensemble(path, cfg)
        print(f"dataset      {path}: m = {data.m} members, q1 = {data.q1}, q2 = {data.q2}")
    elif cfg.simulate is not None:
        print(f"dataset      {path} (to be simulated, m = {cfg.simulate.m})")
    else:
        raise ConfigError(f"dataset {path} does not exist")
    print(f"config hash  {cfg.hash()}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if cfg.simulate is None:
        raise ConfigError("configuration has no 'simulate' section")
    spec = cfg.simulate
    truth = truth_from_spec(spec, cfg.p)
    seed = spec.seed if args.seed is None else args.seed
    try:
        data, record = simulate_dataset(truth, cfg.lattice(), spec.m, seed, cfg.variable_names)
    except ValueError as exc:
        raise ConfigError(f"invalid simulation truth: {exc}") from exc
    path = _dataset_path(cfg, args)
    write_ensemble(path, data)
    atomic_write(path.with_name(path.stem + "_truth.json"), canonical_json(record) + "\n")
    print(f"wrote {path} ({data.m} members, {data.n} grid boxes, {data.p} variables)")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _config(args)
    data = load_ensemble(_dataset_path(cfg, args), cfg)
    archive = run_ensemble_analysis(cfg.sampler, data, cfg.prior)
    out = _out_dir(cfg, args)
    path = out / ARCHIVE_NAME
    write_archive(path, archive, cfg)
    print(f"wrote {path}: {archive.n_chains} chains x {archive.n_saved} samples")
    _print_psrf(archive)
    if archive.meta["warnings"]:
        for w in archive.meta["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
        raise ConvergenceWarning("; ".join(archive.meta["warnings"]))
    return EXIT_OK


def _print_psrf(archive: PosteriorArchive) -> dict:
    psrf = archive.psrf()
    if not psrf:
        print("PSRF: needs at least 2 chains of 10 saved samples")
        return psrf
    print(f"{'scalar':<14}{'PSRF':>10}")
    for name, value in psrf.items():
        print(f"{name:<14}{value:>10.4f}")
    return psrf


def cmd_diagnose(args) -> int:
    archive, header = read_archive(_archive_path(args))
    meta = archive.meta
    print(f"archive: {meta['n_chains']} chains x {meta['n_saved']} samples, seed {meta['seed']}, "
          f"config {header.get('config_hash')}")
    psrf = _print_psrf(archive)
    print("acceptance (frozen regime, per chain):")
    for chain, regimes in sorted(meta["acceptance"].items(), key=lambda kv: int(kv[0])):
        last = regimes.get("regime3") or (regimes[max(regimes)] if regimes else {})
        rates = ", ".join(f"{b}={r:.3f}" for b, r in last.items())
        print(f"  chain {chain}: {rates}")
    threshold = (header.get("config") or {}).get("sampler", {}).get("psrf_threshold", 1.1)
    bad = [k for k, v in psrf.items() if not v < threshold]
    if bad:
        print(f"warning: PSRF >= {threshold} for {', '.join(bad)}", file=sys.stderr)
        raise ConvergenceWarning(", ".join(bad))
    return EXIT_OK


def _prob_specs(cfg: RunConfig, cli: list[str] | None) -> list[tuple[int, str, object]]:
    specs = []
    for raw in cli or []:
        if raw.count(":") == 1:  # DIRECTION:THRESHOLD applies to every variable
            specs += [parse_condition(f"{j}:{raw}", cfg.p) for j in range(cfg.p)]
        else:
            specs.append(parse_condition(raw, cfg.p))
    specs += [parse_condition(s, cfg.p) for s in cfg.analysis.probabilities]
    return list(dict.fromkeys(specs))


def _spec_name(var: int, direction: str, thr) -> str:
    return f"var{var + 1}_{direction}_{thr}"


def cmd_summarize(args) -> int:
    cfg = _config(args)
    archive, _ = read_archive(Path(args.archive) if args.archive else _out_dir(cfg, args) / ARCHIVE_NAME)
    if archive.meta["n"] != cfg.nx * cfg.ny or archive.meta["p"] != cfg.p:
        raise DataError("archive dimensions do not match the configuration")
    out = _out_dir(cfg, args)
    field = archive.field()
    grid = cfg.lattice().grid
    locs = [[str(i), *map(str, grid.coords(i))] for i in range(grid.n)]
    written = []
    warnings = list(archive.meta.get("warnings", []))

    posts = analysis.fit_gridbox_posteriors(field)
    header = ["location", "grid_x", "grid_y"]
    header += [f"mean_var{j + 1}" for j in range(cfg.p)]
    header += [f"cov_{a + 1}{b + 1}" for a in range(cfg.p) for b in range(a, cfg.p)]
    rows = [loc + [_fmt(v) for v in g.mean] + [_fmt(g.cov[a, b]) for a in range(cfg.p) for b in range(a, cfg.p)]
            for loc, g in zip(locs, posts)]
    _write_table(out / "posterior_summary.csv", header, rows)
    written.append("posterior_summary.csv")

    specs = _prob_specs(cfg, args.prob)
    cols, names = [], []
    for var, direction, thr in specs:
        cols.append(analysis.pointwise_probability(field, var, direction, thr))
        names.append("p_" + _spec_name(var, direction, thr))
    for group in cfg.analysis.joint:
        conds = [parse_condition(s, cfg.p) for s in group]
        cols.append(analysis.joint_probability(field, conds))
        names.append("joint_" + "__".join(_spec_name(*c) for c in conds))
    if cols:
        rows = [loc + [_fmt(c[i]) for c in cols] for i, loc in enumerate(locs)]
        _write_table(out / "probability.csv", ["location", "grid_x", "grid_y"] + names, rows)
        written.append("probability.csv")

    if cfg.analysis.conditional:
        header = ["location", "grid_x", "grid_y"]
        cols = []
        for c in cfg.analysis.conditional:
            cv, tv = int(c["cond_var"]), int(c["target_var"])
            event = c.get("target_event", "lower")
            scope = c.get("scope", "per-box")
            for q in (1, 2, 3, 4):
                prob, count = analysis.conditional_quartile_probability(field, cv, q, tv, event, scope)
                tag = f"var{tv + 1}_{event}_given_var{cv + 1}_q{q}"
                header += [f"p_{tag}", f"n_{tag}"]
                cols += [[_fmt(v) for v in prob], [str(int(v)) for v in count]]
        rows = [loc + [col[i] for col in cols] for i, loc in enumerate(locs)]
        _write_table(out / "conditional.csv", header, rows)
        written.append("conditional.csv")

    if cfg.analysis.clusters > 0:
        labels, tree, warn = analysis.cluster_boxes(posts, cfg.analysis.linkage, cfg.analysis.clusters)
        warnings += warn
        _write_table(out / "clusters.csv", ["location", "grid_x", "grid_y", "cluster"],
                     [loc + [str(int(labels[i]))] for i, loc in enumerate(locs)])
        written.append("clusters.csv")
        if tree is not None:
            _write_table(out / "cluster_tree.csv", ["a", "b", "distance", "size"],
                         [[str(int(a)), str(int(b)), _fmt(dist), str(int(size))]
                          for a, b, dist, size in tree.merges])
            written.append("cluster_tree.csv")

    if cfg.analysis.contour_boxes:
        rows = []
        for box in cfg.analysis.contour_boxes:
            pts = analysis.contour_ellipse(posts[box], cfg.analysis.contour_level,
                                           cfg.analysis.contour_resolution)
            rows += [[str(box), str(k), _fmt(x), _fmt(y)] for k, (x, y) in enumerate(pts)]
        _write_table(out / "contours.csv", ["box", "angle_index", "x", "y"], rows)
        written.append("contours.csv")

    manifest = {"config_hash": cfg.hash(), "files": written, "n_samples": int(field.shape[0]),
                "warnings": warnings}
    atomic_write(out / "summary.json", canonical_json(manifest) + "\n")
    for name in written:
        print(f"wrote {out / name}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvmrf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log sampler progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *, seed=False, chains=False, data=False):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        if seed:
            p.add_argument("--seed", type=int, help="base random seed")
        if chains:
            p.add_argument("--chains", type=int, help="number of chains")
        if data:
            p.add_argument("--data", help="ensemble CSV (overrides the config)")

    common(sub.add_parser("validate", help="check a configuration and dataset"), data=True)
    common(sub.add_parser("simulate", help="write a synthetic ensemble"), seed=True, data=True)
    common(sub.add_parser("sample", help="run the MCMC and write an archive"), seed=True, chains=True, data=True)
    p = sub.add_parser("diagnose", help="PSRF table and acceptance rates of an archive")
    p.add_argument("--archive")
    p.add_argument("--out", help="directory of a sample run")
    p = sub.add_parser("summarize", help="probability fields, clusters and contours")
    common(p)
    p.add_argument("--archive")
    p.add_argument("--prob", action="append",
                   help="DIRECTION:THRESHOLD for every variable or VAR:DIRECTION:THRESHOLD "
                        "(e.g. above:median, 0:below:1.5); repeatable")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handlers = {"validate": cmd_validate, "simulate": cmd_simulate, "sample": cmd_sample,
                "diagnose": cmd_diagnose, "summarize": cmd_summarize}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ArchiveFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceWarning:
        return EXIT_CONVERGENCE
    except Exception as exc:  # noqa: BLE001 - last-resort status for unexpected failures
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
