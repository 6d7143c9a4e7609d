"""Command-line pipeline: simulate, fit, evaluate, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Heavy imports happen inside the handlers so ``--threads`` can pin the BLAS
thread count before numpy is loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CONFIG_VERSION = 1

_SIGNAL_PRESETS = {"strong": (0.75, 0.85), "weak": (0.15, 0.25), "null": (0.0, 0.0)}

# Allowed configuration keys and types per command; unknown keys are rejected.
_SCHEMAS = {
    "simulate": {
        "design": str, "signal": str, "zeta_plus": (int, float),
        "zeta_minus": (int, float), "n": int, "size": int, "dims": list,
        "regions": list, "name": str, "seed": int,
    },
    "fit": {
        "data": str, "sampler": str, "n_iter": int, "burn_in": int, "thin": int,
        "gamma1": (int, float), "gamma2": (int, float),
        "a_tau": (int, float), "b_tau": (int, float),
        "omega_quantiles": list, "adaptive_omega": bool, "omega_bounds": list,
        "kl_variance_target": (int, float), "kl_probe_length": int,
        "pip_threshold": (int, float), "m_s": int, "T_0": int,
        "basis_cache": str, "name": str, "seed": int,
    },
    "evaluate": {"summary": str, "truth": str, "name": str},
    "report": {"summary": str, "min_cluster_size": int, "name": str},
}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def _load_config(path, command: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    version = cfg.pop("version", None)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {version!r}")
    schema = _SCHEMAS[command]
    for key, value in cfg.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r} for command {command!r}")
        if not isinstance(value, schema[key]):
            raise ConfigError(f"config key {key!r} has wrong type {type(value).__name__}")
    return cfg


def _set_threads(threads):
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(int(threads))


def _parse_seed(value) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


# ----------------------------------------------------------------- commands

def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config, "simulate")
    design = args.design or cfg.get("design", "2d")
    seed = _parse_seed(args.seed if args.seed is not None else cfg.get("seed", 0))
    name = cfg.get("name", "sim")
    out = Path(args.out or ".")
    signal = args.signal or cfg.get("signal")
    if signal is not None and signal not in _SIGNAL_PRESETS:
        raise ConfigError(f"unknown signal preset {signal!r}")
    zp = cfg.get("zeta_plus")
    zm = cfg.get("zeta_minus")
    if signal is not None:
        zp, zm = _SIGNAL_PRESETS[signal]
    if zp is None or zm is None:
        raise ConfigError("provide --signal or zeta_plus/zeta_minus in the config")

    from . import io, simulate

    if design == "2d":
        spec = simulate.SimSpec2D(n=int(cfg.get("n", 50)), size=int(cfg.get("size", 64)),
                                  zeta_plus=float(zp), zeta_minus=float(zm), seed=seed)
        ds, truth, grid = simulate.generate_2d(spec)
    elif design == "3d":
        regions_cfg = cfg.get("regions")
        if not regions_cfg:
            raise ConfigError("3d design requires a 'regions' list in the config")
        dims = cfg.get("dims")
        if not dims or len(dims) != 3:
            raise ConfigError("3d design requires 'dims' with three axis sizes")
        regions = [
            simulate.Region(sign=int(r["sign"]), center=tuple(r["center"]),
                            radius=r["radius"], kind=r.get("kind", "ball"))
            for r in regions_cfg
        ]
        ds, truth, grid = simulate.generate_3d(
            tuple(int(s) for s in dims), int(cfg.get("n", 50)), regions,
            float(zp), float(zm), seed=seed)
    else:
        raise ConfigError(f"unknown design {design!r}")

    header = io.write_dataset(out, name, grid, ds)
    truth_path = io.write_truth(out, name, truth)
    print(f"wrote {header}")
    print(f"wrote {truth_path}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = _load_config(args.config, "fit")
    data_path = args.data or cfg.get("data")
    if not data_path:
        raise ConfigError("fit requires --data or a 'data' config key")
    sampler_kind = args.sampler or cfg.get("sampler", "gibbs")
    if sampler_kind not in ("gibbs", "hybrid"):
        raise ConfigError(f"sampler must be 'gibbs' or 'hybrid', got {sampler_kind!r}")
    seed = _parse_seed(args.seed if args.seed is not None else cfg.get("seed", 0))
    out = Path(args.out or ".")
    name = cfg.get("name", "fit")

    from . import analysis, gibbs, hybrid, io, kernels, types

    grid, raw = io.read_dataset(data_path)
    try:
        ds = types.normalize_dataset(raw)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    tdata = types.transform_data(ds)

    hp = types.HyperParams(
        gamma1=float(cfg.get("gamma1", 1.5)),
        gamma2=float(cfg.get("gamma2", 0.2)),
        a_tau=float(cfg.get("a_tau", 1e-3)),
        b_tau=float(cfg.get("b_tau", 1e-3)),
        omega_quantiles=tuple(cfg.get("omega_quantiles", (0.75, 1.0))),
        kl_variance_target=float(cfg.get("kl_variance_target", 0.6)),
        kl_probe_length=int(cfg.get("kl_probe_length", 900)),
        pip_threshold=float(cfg.get("pip_threshold", 0.5)),
        seed=seed,
    )

    cache_prefix = cfg.get("basis_cache", str(out / "basis_cache"))
    basis = io.load_basis(cache_prefix, grid, hp)
    if basis is None:
        basis = kernels.build_basis(grid, hp)
        io.save_basis(cache_prefix, basis, grid, hp)
    print(f"basis: L={basis.L} variance_fraction={basis.variance_fraction:.3f}")

    common = {
        "thin": int(cfg.get("thin", 1)),
        "adaptive_omega": bool(cfg.get("adaptive_omega", True)),
        "omega_bounds": tuple(cfg["omega_bounds"]) if "omega_bounds" in cfg else None,
    }
    diagnostics = None
    if sampler_kind == "gibbs":
        gcfg = gibbs.GibbsConfig(n_iter=int(cfg.get("n_iter", 1000)),
                                 burn_in=int(cfg.get("burn_in", 200)), **common)
        samples = gibbs.run_gibbs(tdata, grid, basis, hp, gcfg, seed=seed)
    else:
        hcfg = hybrid.HybridConfig(n_iter=int(cfg.get("n_iter", 1200)),
                                   burn_in=int(cfg.get("burn_in", 400)),
                                   m_s=cfg.get("m_s"), T_0=int(cfg.get("T_0", 20)),
                                   **common)
        samples, diagnostics = hybrid.run_hybrid(tdata, grid, basis, hp, hcfg, seed=seed)

    summary = analysis.summarize(samples, pip_threshold=hp.pip_threshold)
    manifest = io.save_posterior(out, name, samples, summary, grid, diagnostics=diagnostics)
    if diagnostics is not None:
        side = out / f"{name}.diagnostics.json"
        side.write_text(json.dumps(diagnostics, indent=2) + "\n")
        print(f"wrote {side}")
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _load_config(args.config, "evaluate")
    summary_path = args.summary or cfg.get("summary")
    truth_path = args.truth or cfg.get("truth")
    if not summary_path or not truth_path:
        raise ConfigError("evaluate requires --summary and --truth")
    out = Path(args.out or ".")
    name = cfg.get("name", "metrics")

    from . import analysis, io

    summ = io.load_summary_arrays(summary_path)
    truth = io.read_truth(truth_path)
    if truth["sign"].size != summ["sign"].size:
        raise DataError(
            f"shape mismatch: truth has {truth['sign'].size} voxels, "
            f"summary has {summ['sign'].size}")
    results = analysis.metrics(summ["sign"], truth["sign"])
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / f"{name}.json"
    jpath.write_text(json.dumps(results, indent=2) + "\n")
    io.write_metrics_csv(out / f"{name}.csv", results)
    print(json.dumps(results, indent=2))
    print(f"wrote {jpath}")
    return EXIT_OK


def _cmd_report(args) -> int:
    cfg = _load_config(args.config, "report")
    summary_path = args.summary or cfg.get("summary")
    if not summary_path:
        raise ConfigError("report requires --summary")
    min_size = int(args.min_cluster_size if args.min_cluster_size is not None
                   else cfg.get("min_cluster_size", 100))
    out = Path(args.out or ".")
    name = cfg.get("name", "report")

    import numpy as np

    from . import analysis, io, types

    summ = io.load_summary_arrays(summary_path)
    grid = types.GridDomain.regular(summ["dims"], mask=summ["mask"])
    report = analysis.clusters(summ["sign"], grid, min_size=min_size,
                               mean_rho=summ["mean_rho"],
                               pip_plus=summ["pip_plus"], pip_minus=summ["pip_minus"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.clusters.csv"
    io.write_cluster_csv(csv_path, report)

    # one positive and one negative PGM per slice, |rho| scaled linearly to 0..255
    rho_lattice = grid.embed(summ["mean_rho"], fill=0.0)
    sign_lattice = grid.embed(summ["sign"].astype(np.float64), fill=0.0)
    slices = range(grid.dims[0]) if grid.d == 3 else [None]
    for k in slices:
        pos = np.where(sign_lattice > 0, np.clip(rho_lattice, 0.0, 1.0), 0.0)
        neg = np.where(sign_lattice < 0, np.clip(-rho_lattice, 0.0, 1.0), 0.0)
        if k is None:
            pslice, nslice, tag = pos, neg, "slice000"
        else:
            pslice, nslice, tag = pos[k], neg[k], f"slice{k:03d}"
        io.write_pgm(out / f"{name}.{tag}.positive.pgm", 255.0 * pslice)
        io.write_pgm(out / f"{name}.{tag}.negative.pgm", 255.0 * nslice)
    print(f"wrote {csv_path} and {2 * len(list(slices))} map images")
    return EXIT_OK


# --------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="unsigned 64-bit master seed")
    common.add_argument("--threads", type=int, help="BLAS/OpenMP thread cap")
    common.add_argument("--out", help="output directory (default .)")

    parser = argparse.ArgumentParser(
        prog="tcgp",
        description="Spatially varying correlation mapping between two image modalities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--design", choices=["2d", "3d"])
    p.add_argument("--signal", choices=sorted(_SIGNAL_PRESETS))
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit the correlation model")
    p.add_argument("--data", help="dataset header (.json)")
    p.add_argument("--sampler", choices=["gibbs", "hybrid"])
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("evaluate", parents=[common], help="score a fit against ground truth")
    p.add_argument("--summary", help="posterior manifest (.posterior.json)")
    p.add_argument("--truth", help="truth header (.truth.json)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="cluster table and map images")
    p.add_argument("--summary", help="posterior manifest (.posterior.json)")
    p.add_argument("--min-cluster-size", type=int, dest="min_cluster_size")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _set_threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        from .piecewise import NonIntegrableError

        if isinstance(exc, (NonIntegrableError, FloatingPointError,
                            ArithmeticError, RuntimeError)):
            print(f"numeric error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, ValueError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
