"""Command-line pipeline: simulate, detect-edges, reconstruct, plot, eval.

A run directory accumulates the outputs of the pipeline stages; each stage
verifies the checksums recorded in ``manifest.json`` before consuming a file.
Configuration lives in one YAML file (see ``configs/``); command-line flags
override the file values. Exit codes: 0 success, 2 configuration/validation
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import presets
from .analytic import RegionValues, paint_regions, recover, segment
from .edges import EdgeMask, EdgeParams, detect_edges
from .exceptions import (ConfigError, EdgeDetectionError, RecoveryError,
                         SolverDivergence, SolverError)
from .fem import absorbed_energy, solve_dirichlet
from .grid import (CoefficientField, Grid, ScalarField, constant_scalar,
                   load_coefficient_csv, load_scalar_csv, save_coefficient_csv,
                   save_scalar_csv)
from .metrics import (diagonal_profiles, inclusion_dice, mask_recall_precision,
                      relative_l2)
from .phantom import (PhantomSpec, add_noise, downsample_average, load_phantom,
                      phantom_from_dict, rasterize, true_jump_nodes)
from .variational import Hyperparams, minimize


@dataclass
class RunConfig:
    """Everything one pipeline run needs."""

    phantom: PhantomSpec
    fine_cells: int = 400
    coarse_cells: int = 200
    noise: float = 0.0
    seed: int = 0
    illumination: float = 1.0
    edge_params: EdgeParams = field(default_factory=EdgeParams)
    hyperparams: Hyperparams | None = None
    mode: str = "variational"  # analytic | variational | both
    paper_faithful: bool = False

    def __post_init__(self):
        if self.fine_cells % self.coarse_cells:
            raise ConfigError(
                f"fine cells {self.fine_cells} not divisible by coarse "
                f"{self.coarse_cells}")
        if self.mode not in ("analytic", "variational", "both"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.noise < 0:
            raise ConfigError("noise level must be nonnegative")

    @property
    def factor(self) -> int:
        return self.fine_cells // self.coarse_cells


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}

    phantom_cfg = cfg.get("phantom")
    if isinstance(phantom_cfg, str):
        ppath = Path(phantom_cfg)
        if not ppath.is_absolute():
            ppath = path.parent / ppath
        spec = load_phantom(ppath)
    elif isinstance(phantom_cfg, dict):
        spec = phantom_from_dict(phantom_cfg)
    else:
        raise ConfigError("config needs a 'phantom' path or mapping")

    preset = cfg.get("preset")
    edge_kwargs = dict(presets.EDGE[preset]) if preset else {}
    func_kwargs = dict(presets.FUNCTIONAL[preset],
                       epsilon=presets.EPSILON,
                       lower=presets.BOX_LOWER,
                       upper=presets.BOX_UPPER) if preset else {}
    edge_kwargs.update(cfg.get("edges", {}))
    func_kwargs.update(cfg.get("functional", {}))
    if "stages" in edge_kwargs:
        edge_kwargs["stages"] = tuple(edge_kwargs["stages"])
    for key in ("sigma", "xi"):
        if key in edge_kwargs:
            edge_kwargs[key] = tuple(edge_kwargs[key])

    try:
        edge_params = EdgeParams(**edge_kwargs) if edge_kwargs else EdgeParams()
        hyper = Hyperparams(**func_kwargs) if func_kwargs else None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters in {path}: {exc}") from exc

    noise = cfg.get("noise", presets.NOISE_LEVELS.get(
        (preset or "").split("_", 1)[-1] if preset else "", 0.0))
    return RunConfig(
        phantom=spec,
        fine_cells=int(cfg.get("fine_cells", 400)),
        coarse_cells=int(cfg.get("coarse_cells", 200)),
        noise=float(noise),
        seed=int(cfg.get("seed", 0)),
        illumination=float(cfg.get("illumination", 1.0)),
        edge_params=edge_params,
        hyperparams=hyper,
        mode=str(cfg.get("mode", "variational")),
        paper_faithful=bool(cfg.get("paper_faithful", False)),
    )


# ---------------------------------------------------------------------------
# manifest bookkeeping
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json"


def _load_manifest(out: Path) -> dict:
    p = _manifest_path(out)
    if not p.exists():
        raise ConfigError(f"no manifest in {out}; run 'simulate' first")
    with open(p) as fh:
        return json.load(fh)


def _save_manifest(out: Path, manifest: dict) -> None:
    with open(_manifest_path(out), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _register(manifest: dict, out: Path, *names: str) -> None:
    files = manifest.setdefault("files", {})
    for name in names:
        files[name] = {"sha256": _sha256(out / name)}


def _verify(manifest: dict, out: Path, *names: str) -> None:
    files = manifest.get("files", {})
    for name in names:
        path = out / name
        if name not in files:
            raise ConfigError(f"{name} is not registered in the manifest")
        if not path.exists():
            raise ConfigError(f"{name} is missing from {out}")
        if _sha256(path) != files[name]["sha256"]:
            raise ConfigError(f"{name} does not match its manifest checksum")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(config: RunConfig, out: Path) -> dict:
    """Generate ground truth and measurement data for one scene."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    fine = config.phantom.grid(config.fine_cells)
    mu_f, d_f = rasterize(config.phantom, fine)
    g_f = constant_scalar(fine, config.illumination)
    u_f = solve_dirichlet(mu_f, d_f, g_f)
    e_f = absorbed_energy(mu_f, u_f)
    e_clean = downsample_average(e_f, config.factor)
    coarse = e_clean.grid
    sample = add_noise(e_clean, config.noise, config.seed)
    mu_c, d_c = rasterize(config.phantom, coarse)

    save_coefficient_csv(mu_c, out / "mu_true.csv")
    save_coefficient_csv(d_c, out / "d_true.csv")
    save_scalar_csv(sample.clean, out / "e_clean.csv")
    save_scalar_csv(sample.noisy, out / "e_noisy.csv")

    manifest = {
        "fine_cells": config.fine_cells,
        "coarse_cells": config.coarse_cells,
        "noise": config.noise,
        "seed": config.seed,
        "illumination": config.illumination,
        "domain": [config.phantom.lx, config.phantom.ly],
        "bounds": [config.phantom.lower, config.phantom.upper],
        "runtime_seconds": {"simulate": time.time() - t0},
    }
    _register(manifest, out, "mu_true.csv", "d_true.csv", "e_clean.csv",
              "e_noisy.csv")
    _save_manifest(out, manifest)
    return manifest


def cmd_detect_edges(config: RunConfig, out: Path) -> dict:
    """Estimate the coefficient jump set from the noisy data."""
    manifest = _load_manifest(out)
    _verify(manifest, out, "e_noisy.csv")
    t0 = time.time()
    e_noisy = load_scalar_csv(out / "e_noisy.csv")
    mask = detect_edges(e_noisy, config.edge_params)
    save_scalar_csv(mask.to_field(), out / "edges.csv")
    save_scalar_csv(ScalarField(mask.grid, mask.provenance.astype(float)),
                    out / "edges_stage.csv")
    manifest.setdefault("runtime_seconds", {})["detect_edges"] = time.time() - t0
    manifest["edge_params"] = {
        "sigma": list(config.edge_params.sigma),
        "xi": list(config.edge_params.xi),
        "gamma": config.edge_params.gamma,
        "stages": list(config.edge_params.stages),
    }
    _register(manifest, out, "edges.csv", "edges_stage.csv")
    _save_manifest(out, manifest)
    return manifest


def _load_edges(out: Path) -> EdgeMask:
    f = load_scalar_csv(out / "edges.csv")
    stages = load_scalar_csv(out / "edges_stage.csv")
    return EdgeMask(f.grid, f.values > 0.5,
                    stages.values.astype(np.int8))


def _analytic_reconstruct(config: RunConfig, out: Path, sub: Path,
                          metrics: dict) -> None:
    e_noisy = load_scalar_csv(out / "e_noisy.csv")
    mu_true = load_coefficient_csv(out / "mu_true.csv")
    d_true = load_coefficient_csv(out / "d_true.csv")
    edges = _load_edges(out)
    part = segment(edges)
    values = recover(e_noisy, part, g=config.illumination)
    mu_est = CoefficientField(e_noisy.grid, paint_regions(part, values.mu))
    d_est = CoefficientField(e_noisy.grid, paint_regions(part, values.d))
    sub.mkdir(parents=True, exist_ok=True)
    save_coefficient_csv(mu_est, sub / "mu_est.csv")
    save_coefficient_csv(d_est, sub / "d_est.csv")
    with open(sub / "regions.json", "w") as fh:
        json.dump({"n_regions": part.n_regions,
                   "mu": values.mu.tolist(),
                   "d": values.d.tolist(),
                   "diagnostics": values.diagnostics},
                  fh, indent=2, sort_keys=True, default=str)
    _write_profiles(sub, mu_true, mu_est, d_true, d_est)
    metrics["analytic"] = {
        "n_regions": part.n_regions,
        "rel_l2_mu": relative_l2(mu_est.values, mu_true.values),
        "rel_l2_d": relative_l2(d_est.values, d_true.values),
        "dice_mu": inclusion_dice(mu_est, mu_true),
    }


def _variational_reconstruct(config: RunConfig, out: Path, sub: Path,
                             metrics: dict) -> None:
    if config.hyperparams is None:
        raise ConfigError("variational mode needs a 'functional' section or preset")
    e_noisy = load_scalar_csv(out / "e_noisy.csv")
    mu_true = load_coefficient_csv(out / "mu_true.csv")
    d_true = load_coefficient_csv(out / "d_true.csv")
    edges = _load_edges(out) if (out / "edges.csv").exists() else None
    g = constant_scalar(e_noisy.grid, config.illumination)
    state, records = minimize(e_noisy, config.hyperparams,
                              initial_edges=edges, g=g,
                              backtracking=not config.paper_faithful)
    sub.mkdir(parents=True, exist_ok=True)
    with open(sub / "iterations.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_coefficient_csv(state.mu, sub / "mu_est.csv")
    save_coefficient_csv(state.d, sub / "d_est.csv")
    save_scalar_csv(state.v_mu, sub / "v_mu.csv")
    save_scalar_csv(state.v_d, sub / "v_d.csv")
    _write_profiles(sub, mu_true, state.mu, d_true, state.d)
    metrics["variational"] = {
        "rel_l2_mu": relative_l2(state.mu.values, mu_true.values),
        "rel_l2_d": relative_l2(state.d.values, d_true.values),
        "dice_mu": inclusion_dice(state.mu, mu_true),
        "functional_terms": state.breakdown.as_dict(),
        "iterations": len([r for r in records if r["phase"] == "gn"]),
        "outer_sweeps": records[-1]["outer"],
    }


def _write_profiles(sub: Path, mu_true, mu_est, d_true, d_est) -> None:
    prof = diagonal_profiles(mu_true.as_matrix(), mu_est.as_matrix(),
                             d_true.as_matrix(), d_est.as_matrix())
    header_map = {"0": "mu_true", "1": "mu_est", "2": "d_true", "3": "d_est"}
    for kind in ("diag", "antidiag"):
        cols = ["index"] + [f"{kind}_{i}" for i in "0123"]
        names = ["index"] + [header_map[i] for i in "0123"]
        data = np.column_stack([prof[c] for c in cols])
        with open(sub / f"profile_{kind}.csv", "w") as fh:
            fh.write(",".join(names) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def cmd_reconstruct(config: RunConfig, out: Path) -> dict:
    """Run the configured reconstruction(s) and write metrics."""
    manifest = _load_manifest(out)
    _verify(manifest, out, "e_noisy.csv", "mu_true.csv", "d_true.csv")
    if (out / "edges.csv").exists():
        _verify(manifest, out, "edges.csv", "edges_stage.csv")
    metrics: dict = {}
    times = {}
    modes = ("analytic", "variational") if config.mode == "both" else (config.mode,)
    for mode in modes:
        sub = out / mode
        t0 = time.time()
        if mode == "analytic":
            _analytic_reconstruct(config, out, sub, metrics)
        else:
            _variational_reconstruct(config, out, sub, metrics)
        times[mode] = time.time() - t0
    metrics["runtime_seconds"] = times
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.setdefault("runtime_seconds", {}).update(times)
    for mode in modes:
        _register(manifest, out, f"{mode}/mu_est.csv", f"{mode}/d_est.csv")
    _save_manifest(out, manifest)
    return metrics


def cmd_eval(config: RunConfig, out: Path) -> dict:
    """Recompute reconstruction metrics from the files on disk."""
    manifest = _load_manifest(out)
    mu_true = load_coefficient_csv(out / "mu_true.csv")
    d_true = load_coefficient_csv(out / "d_true.csv")
    metrics: dict = {}
    for mode in ("analytic", "variational"):
        sub = out / mode
        if not (sub / "mu_est.csv").exists():
            continue
        _verify(manifest, out, f"{mode}/mu_est.csv", f"{mode}/d_est.csv")
        mu_est = load_coefficient_csv(sub / "mu_est.csv")
        d_est = load_coefficient_csv(sub / "d_est.csv")
        metrics[mode] = {
            "rel_l2_mu": relative_l2(mu_est.values, mu_true.values),
            "rel_l2_d": relative_l2(d_est.values, d_true.values),
            "dice_mu": inclusion_dice(mu_est, mu_true),
        }
    if (out / "edges.csv").exists():
        edges = _load_edges(out)
        truth = true_jump_nodes(mu_true, d_true)
        recall, precision = mask_recall_precision(
            edges.as_matrix(), truth.reshape(edges.grid.ny, edges.grid.nx))
        metrics["edges"] = {"recall": recall, "precision": precision,
                            "detected_pixels": edges.count()}
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return metrics


def cmd_plot(out: Path) -> list[str]:
    """Render heatmaps, edge masks and diagonal profiles as PNG files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written: list[str] = []

    def heatmap(values2d, path, title, vmin=None, vmax=None, cmap="viridis"):
        fig, ax = plt.subplots(figsize=(4.6, 4.0))
        im = ax.imshow(values2d, origin="lower", cmap=cmap,
                       vmin=vmin, vmax=vmax, interpolation="nearest")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.85)
        fig.tight_layout()
        fig.savefig(path, dpi=140)
        plt.close(fig)
        written.append(str(path))

    mu_true = load_coefficient_csv(out / "mu_true.csv")
    d_true = load_coefficient_csv(out / "d_true.csv")
    heatmap(mu_true.as_matrix(), out / "mu_true.png", "absorption (true)")
    heatmap(d_true.as_matrix(), out / "d_true.png", "diffusion (true)")
    for name in ("e_clean", "e_noisy"):
        if (out / f"{name}.csv").exists():
            f = load_scalar_csv(out / f"{name}.csv")
            heatmap(f.as_matrix(), out / f"{name}.png", name.replace("_", " "))
    if (out / "edges.csv").exists():
        edges = load_scalar_csv(out / "edges.csv")
        heatmap(edges.as_matrix(), out / "edges.png", "detected jump set",
                vmin=0.0, vmax=1.0, cmap="gray")
    for mode in ("analytic", "variational"):
        sub = out / mode
        if not (sub / "mu_est.csv").exists():
            continue
        mu_est = load_coefficient_csv(sub / "mu_est.csv")
        d_est = load_coefficient_csv(sub / "d_est.csv")
        # color range pinned to the true parameter range
        heatmap(mu_est.as_matrix(), sub / "mu_est.png",
                f"absorption ({mode})",
                vmin=float(mu_true.values.min()), vmax=float(mu_true.values.max()))
        heatmap(d_est.as_matrix(), sub / "d_est.png", f"diffusion ({mode})",
                vmin=float(d_true.values.min()), vmax=float(d_true.values.max()))
        for kind in ("diag", "antidiag"):
            ppath = sub / f"profile_{kind}.csv"
            if not ppath.exists():
                continue
            data = np.genfromtxt(ppath, delimiter=",", names=True)
            fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
            for ax, what in zip(axes, ("mu", "d")):
                ax.plot(data["index"], data[f"{what}_true"], label="true")
                ax.plot(data["index"], data[f"{what}_est"], label="estimate")
                ax.set_title(f"{what} along {kind}")
                ax.legend()
            fig.tight_layout()
            fig.savefig(sub / f"profile_{kind}.png", dpi=140)
            plt.close(fig)
            written.append(str(sub / f"profile_{kind}.png"))
        if (sub / "v_mu.csv").exists():
            for vname in ("v_mu", "v_d"):
                v = load_scalar_csv(sub / f"{vname}.csv")
                heatmap(v.as_matrix(), sub / f"{vname}.png",
                        f"edge indicator {vname}", vmin=0.0, vmax=1.0,
                        cmap="gray")
    return written


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpat2d",
        description="simulate photoacoustic absorbed-energy data and "
                    "reconstruct piecewise-constant optical coefficients")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_config=True):
        if need_config:
            p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p = sub.add_parser("simulate", help="generate truth and noisy data")
    add_common(p)
    p = sub.add_parser("detect-edges", help="estimate the jump set")
    add_common(p)
    p = sub.add_parser("reconstruct", help="recover the coefficients")
    add_common(p)
    p.add_argument("--mode", choices=("analytic", "variational", "both"),
                   default=None, help="override the config mode")
    p.add_argument("--paper-faithful", action="store_true",
                   help="disable step backtracking (plain update rule)")
    p = sub.add_parser("plot", help="render PNG figures from a run directory")
    p.add_argument("--out", required=True)
    p = sub.add_parser("eval", help="recompute metrics from a run directory")
    add_common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "plot":
            for path in cmd_plot(out):
                print(path)
            return 0
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if getattr(args, "mode", None):
            config.mode = args.mode
        if getattr(args, "paper_faithful", False):
            config.paper_faithful = True
        if args.command == "simulate":
            cmd_simulate(config, out)
        elif args.command == "detect-edges":
            cmd_detect_edges(config, out)
        elif args.command == "reconstruct":
            cmd_reconstruct(config, out)
        elif args.command == "eval":
            cmd_eval(config, out)
        return 0
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, SolverDivergence, EdgeDetectionError,
            RecoveryError) as exc:
        if isinstance(exc, SolverDivergence):
            log_path = out / "divergence_log.jsonl"
            with open(log_path, "w") as fh:
                for rec in exc.log:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            print(f"solver diverged; iteration log at {log_path}",
                  file=sys.stderr)
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
