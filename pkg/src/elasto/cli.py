"""Command-line pipeline: simulate -> estimate -> strain -> evaluate -> report.

All parameters arrive through one JSON config file; the command line only
carries the command, the config path, the output directory and an optional
seed override.  Every command writes its fully expanded effective config
next to its outputs, and re-running with that echo reproduces every output
byte for byte.  Relative paths inside the config resolve against the output
directory, so a run directory is self-contained.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io as eio
from . import metrics as emetrics
from . import strain as estrain
from .dpinit import DpConfig, dp_estimate
from .io import StrainImage
from .phantom import DeformationModel, FrameGeometry, PsfModel, layer_strains, make_phantom_pair
from .solver import NumericError, make_solver_config, refine

COMMANDS = ("simulate", "estimate", "strain", "evaluate", "report")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _section(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise ConfigError(name, "missing required section")
    value = cfg[name]
    if not isinstance(value, dict):
        raise ConfigError(name, "section must be a JSON object")
    return value


def _check_keys(obj: dict, allowed, path: str):
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


def _require(obj: dict, key: str, path: str):
    if key not in obj or obj[key] is None:
        raise ConfigError(f"{path}.{key}", "missing required key")
    return obj[key]


_PHANTOM_KEYS = {
    "kind", "height_mm", "width_mm", "boundaries_mm", "moduli_kpa", "compression",
    "poisson", "center_mm", "radius_mm", "blend_width_mm", "shift_samples", "band_mm",
    "grid", "seed", "psnr_db", "density_per_cell", "normalize", "peak_amplitude", "psf",
}
_GRID_KEYS = {"m", "n", "axial_spacing_mm", "lateral_spacing_mm", "center_mhz", "sampling_mhz"}
_PSF_KEYS = {"axial_sigma_wavelengths", "lateral_sigma_mm", "cutoff_sigmas"}
_DP_KEYS = {"axial_range", "lateral_range", "smoothness", "data_cost", "decimation"}
_SOLVER_KEYS = {
    "preset", "second_order_multiplier",
    "alpha1", "alpha2", "beta1", "beta2", "theta1", "theta2", "lambda1", "lambda2",
    "gamma", "eta0", "eta1", "eta2", "eta_data", "norm_first", "norm_second", "norm_data",
    "iterations", "tol", "trust_radius", "tikhonov", "solve_tol",
}
_ESTIMATE_KEYS = {"i1", "i2"}
_STRAIN_KEYS = {"displacement", "kernel", "display_range"}
_EVALUATE_KEYS = {
    "strain", "truth", "axial_spacing_mm", "target_windows", "background_windows",
    "esf_column", "esf_plateau_low_mm", "esf_plateau_high_mm",
}
_REPORT_KEYS = {"reports", "labels"}


def _expand_phantom(section: dict) -> dict:
    _check_keys(section, _PHANTOM_KEYS, "phantom")
    grid_in = _section({"grid": section.get("grid", {})}, "grid")
    _check_keys(grid_in, _GRID_KEYS, "phantom.grid")
    psf_in = section.get("psf", {})
    _check_keys(psf_in, _PSF_KEYS, "phantom.psf")

    kind = _require(section, "kind", "phantom")
    if kind not in ("layers", "thin_layer", "inclusion", "rigid_shift"):
        raise ConfigError("phantom.kind", f"unknown deformation kind {kind!r}")
    out = {
        "kind": kind,
        "height_mm": section.get("height_mm"),
        "width_mm": section.get("width_mm"),
        "boundaries_mm": list(section.get("boundaries_mm", [])),
        "moduli_kpa": list(section.get("moduli_kpa", [])),
        "compression": section.get("compression"),
        "poisson": section.get("poisson", 0.49),
        "center_mm": section.get("center_mm"),
        "radius_mm": section.get("radius_mm"),
        "blend_width_mm": section.get("blend_width_mm"),
        "shift_samples": section.get("shift_samples"),
        "band_mm": section.get("band_mm"),
        "grid": {
            "m": int(_require(grid_in, "m", "phantom.grid")),
            "n": int(_require(grid_in, "n", "phantom.grid")),
            "axial_spacing_mm": grid_in.get("axial_spacing_mm", 0.01925),
            "lateral_spacing_mm": grid_in.get("lateral_spacing_mm", 0.2),
            "center_mhz": grid_in.get("center_mhz", 7.27),
            "sampling_mhz": grid_in.get("sampling_mhz", 40.0),
        },
        "seed": int(_require(section, "seed", "phantom")),
        "psnr_db": section.get("psnr_db"),
        "density_per_cell": section.get("density_per_cell", 12.0),
        "normalize": bool(section.get("normalize", True)),
        "peak_amplitude": section.get("peak_amplitude", 1.0),
        "psf": {
            "axial_sigma_wavelengths": psf_in.get("axial_sigma_wavelengths",
                                                  PsfModel.axial_sigma_wavelengths),
            "lateral_sigma_mm": psf_in.get("lateral_sigma_mm", PsfModel.lateral_sigma_mm),
            "cutoff_sigmas": psf_in.get("cutoff_sigmas", PsfModel.cutoff_sigmas),
        },
    }
    if kind in ("layers", "thin_layer", "inclusion") and out["compression"] is None:
        raise ConfigError("phantom.compression", "missing required key")
    if kind == "rigid_shift" and out["shift_samples"] is None:
        raise ConfigError("phantom.shift_samples", "missing required key")
    return out


def _expand_dp(section: dict) -> dict:
    _check_keys(section, _DP_KEYS, "dp")
    return {
        "axial_range": section.get("axial_range"),
        "lateral_range": section.get("lateral_range", 2),
        "smoothness": section.get("smoothness"),
        "data_cost": section.get("data_cost", "absolute"),
        "decimation": section.get("decimation", 1),
    }


def _expand_solver(section: dict) -> dict:
    _check_keys(section, _SOLVER_KEYS, "solver")
    preset = _require(section, "preset", "solver")
    overrides = {k: v for k, v in section.items()
                 if k not in ("preset", "second_order_multiplier") and v is not None}
    try:
        cfg = make_solver_config(preset, section.get("second_order_multiplier"), **overrides)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from exc
    out = {"preset": preset}
    for key in sorted(_SOLVER_KEYS - {"preset", "second_order_multiplier"}):
        out[key] = getattr(cfg, key)
    return out


def _expand_strain(section: dict) -> dict:
    _check_keys(section, _STRAIN_KEYS, "strain")
    kernel = section.get("kernel", 3)
    if kernel % 2 == 0 or kernel < 3:
        raise ConfigError("strain.kernel", f"kernel must be odd and >= 3, got {kernel}")
    return {
        "displacement": section.get("displacement", "refined.dsp"),
        "kernel": kernel,
        "display_range": list(section.get("display_range", [-0.06, 0.0])),
    }


def _expand_evaluate(section: dict) -> dict:
    _check_keys(section, _EVALUATE_KEYS, "evaluate")
    def windows(key):
        out = []
        for idx, w in enumerate(section.get(key, [])):
            if len(w) != 4:
                raise ConfigError(f"evaluate.{key}[{idx}]",
                                  "window must be [top, left, height, width]")
            out.append([int(v) for v in w])
        return out

    return {
        "strain": section.get("strain", "strain.str"),
        "truth": section.get("truth"),
        "axial_spacing_mm": section.get("axial_spacing_mm", 0.01925),
        "target_windows": windows("target_windows"),
        "background_windows": windows("background_windows"),
        "esf_column": section.get("esf_column"),
        "esf_plateau_low_mm": section.get("esf_plateau_low_mm"),
        "esf_plateau_high_mm": section.get("esf_plateau_high_mm"),
    }


def _expand_report(section: dict) -> dict:
    _check_keys(section, _REPORT_KEYS, "report")
    reports = _require(section, "reports", "report")
    labels = section.get("labels") or [Path(p).stem for p in reports]
    if len(labels) != len(reports):
        raise ConfigError("report.labels", "labels must match reports in length")
    return {"reports": list(reports), "labels": list(labels)}


_EXPANDERS = {
    "phantom": _expand_phantom,
    "dp": _expand_dp,
    "solver": _expand_solver,
    "strain": _expand_strain,
    "evaluate": _expand_evaluate,
    "report": _expand_report,
    "estimate": lambda s: (_check_keys(s, _ESTIMATE_KEYS, "estimate") or {
        "i1": s.get("i1", "I1.rfe"), "i2": s.get("i2", "I2.rfe")}),
}

_NEEDS = {
    "simulate": ("phantom",),
    "estimate": ("estimate", "dp", "solver"),
    "strain": ("strain",),
    "evaluate": ("evaluate",),
    "report": ("report",),
}


def expand_config(cfg: dict, command: str, seed_override: int | None = None) -> dict:
    """Validate and fill defaults for every recognized section present."""
    if not isinstance(cfg, dict):
        raise ConfigError("$", "config root must be a JSON object")
    _check_keys(cfg, set(_EXPANDERS), "$")
    if seed_override is not None:
        cfg = dict(cfg)
        phantom = dict(cfg.get("phantom", {}))
        phantom["seed"] = int(seed_override)
        cfg["phantom"] = phantom
    for name in _NEEDS[command]:
        if name not in cfg:
            raise ConfigError(name, "missing required section")
    return {name: _EXPANDERS[name](dict(section)) for name, section in cfg.items()}


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _write_json(obj: dict, path: Path):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    path.write_text(text + "\n")


def _resolve(path_str: str, out_dir: Path) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else out_dir / p


def _build_model(p: dict) -> DeformationModel:
    return DeformationModel(
        kind=p["kind"],
        height_mm=p["height_mm"],
        width_mm=p["width_mm"],
        boundaries_mm=tuple(p["boundaries_mm"]),
        moduli_kpa=tuple(p["moduli_kpa"]),
        compression=p["compression"],
        poisson=p["poisson"],
        center_mm=tuple(p["center_mm"]) if p["center_mm"] else None,
        radius_mm=p["radius_mm"],
        blend_width_mm=p["blend_width_mm"],
        shift_samples=p["shift_samples"],
        band_mm=tuple(p["band_mm"]) if p["band_mm"] else None,
    )


def cmd_simulate(cfg: dict, out_dir: Path):
    p = cfg["phantom"]
    grid = FrameGeometry(**p["grid"])
    psf = PsfModel(**p["psf"])
    model = _build_model(p)
    pre, post, truth = make_phantom_pair(
        model, grid, seed=p["seed"], psnr_db=p["psnr_db"],
        density_per_cell=p["density_per_cell"], normalize=p["normalize"],
        peak_amplitude=p["peak_amplitude"], psf=psf,
    )
    eio.write_frame(pre, out_dir / "I1.rfe")
    eio.write_frame(post, out_dir / "I2.rfe")
    eio.write_field(truth.displacement, out_dir / "truth.dsp")
    eio.write_strain(truth.strain, out_dir / "truth.str")
    if model.kind in ("layers", "thin_layer"):
        strains = layer_strains(model.with_extents(grid.height_mm, grid.width_mm))
        print("per-layer strains:", " ".join(f"{s:.6g}" for s in strains))
    else:
        print(f"phantom kind: {model.kind}")
    _write_json(cfg, out_dir / "effective_simulate.json")


def cmd_estimate(cfg: dict, out_dir: Path):
    frames = cfg["estimate"]
    i1 = eio.read_frame(_resolve(frames["i1"], out_dir))
    i2 = eio.read_frame(_resolve(frames["i2"], out_dir))
    if (i1.m, i1.n) != (i2.m, i2.n):
        raise ValueError(f"frame dims differ: {(i1.m, i1.n)} vs {(i2.m, i2.n)}")
    dp_cfg = DpConfig(**cfg["dp"])
    t0 = time.perf_counter()
    prior = dp_estimate(i1, i2, dp_cfg)
    t_dp = time.perf_counter() - t0
    solver_cfg = make_solver_config(
        cfg["solver"]["preset"],
        **{k: v for k, v in cfg["solver"].items() if k != "preset"},
    )
    t0 = time.perf_counter()
    refined, trace = refine(i1, i2, prior, solver_cfg)
    t_refine = time.perf_counter() - t0
    eio.write_field(prior, out_dir / "prior.dsp")
    eio.write_field(refined, out_dir / "refined.dsp")
    eio.write_csv(
        {
            "iteration": [r.iteration for r in trace],
            "cost": [r.cost for r in trace],
            "step_inf": [r.step_inf for r in trace],
        },
        out_dir / "trace.csv",
    )
    peak = max(r.system_nbytes for r in trace)
    print(f"dp {t_dp:.2f} s, refine {t_refine:.2f} s "
          f"({len(trace) - 1} iterations), peak system {peak / 1e6:.1f} MB")
    _write_json(cfg, out_dir / "effective_estimate.json")


def cmd_strain(cfg: dict, out_dir: Path):
    s = cfg["strain"]
    field = eio.read_field(_resolve(s["displacement"], out_dir))
    image = estrain.lsq_strain(field, s["kernel"])
    eio.write_strain(image, out_dir / "strain.str")
    lo, hi = s["display_range"]
    eio.write_pgm(image.values, out_dir / "strain.pgm", lo, hi)
    _write_json(cfg, out_dir / "effective_strain.json")


def _quality_report(cfg: dict, image: StrainImage, truth: StrainImage | None, out_dir: Path):
    ev = cfg["evaluate"]
    targets = [emetrics.WindowSpec(*w, role="target") for w in ev["target_windows"]]
    backgrounds = [emetrics.WindowSpec(*w, role="background") for w in ev["background_windows"]]
    for idx, w in enumerate(targets + backgrounds):
        try:
            w.validate(image)
        except ValueError as exc:
            raise ValueError(f"window {idx}: {exc}") from exc

    report = emetrics.QualityReport()
    if targets and backgrounds:
        t_stats = emetrics.window_stats(image, targets[0])
        b_stats = emetrics.window_stats(image, backgrounds[0])
        report.snr = emetrics.snr(b_stats)
        report.cnr = emetrics.cnr(t_stats, b_stats)
        report.sr = emetrics.strain_ratio(t_stats, b_stats)
        report.cnr_histogram = list(emetrics.cnr_histogram(image, targets, backgrounds))
    if truth is not None:
        report.mean_ssim = emetrics.mean_ssim(truth, image)
        report.l2_error = emetrics.l2_error(truth, image)
        if ev["esf_column"] is not None and ev["esf_plateau_low_mm"] and ev["esf_plateau_high_mm"]:
            profile = estrain.esf_profile(image, ev["esf_column"], ev["axial_spacing_mm"])
            low = estrain.plateau_level(profile, *ev["esf_plateau_low_mm"])
            high = estrain.plateau_level(profile, *ev["esf_plateau_high_mm"])
            try:
                report.edge_resolution_mm = estrain.edge_resolution(profile, low, high)
            except ValueError:
                report.edge_resolution_mm = None
    return report


def cmd_evaluate(cfg: dict, out_dir: Path):
    ev = cfg["evaluate"]
    image = eio.read_strain(_resolve(ev["strain"], out_dir))
    truth = eio.read_strain(_resolve(ev["truth"], out_dir)) if ev["truth"] else None
    report = _quality_report(cfg, image, truth, out_dir)

    payload = report.to_dict()
    payload["target_windows"] = ev["target_windows"]
    payload["background_windows"] = ev["background_windows"]
    _write_json(payload, out_dir / "report.json")

    n_b = len(ev["background_windows"])
    hist = report.cnr_histogram
    eio.write_csv(
        {
            "target_index": [i // n_b for i in range(len(hist))] if n_b else [],
            "background_index": [i % n_b for i in range(len(hist))] if n_b else [],
            "cnr": hist,
        },
        out_dir / "cnr_hist.csv",
    )
    if ev["esf_column"] is not None:
        profile = estrain.esf_profile(image, ev["esf_column"], ev["axial_spacing_mm"])
        columns = {"depth_mm": profile.depth_mm, "strain": profile.values}
        if truth is not None:
            tprof = estrain.esf_profile(truth, ev["esf_column"], ev["axial_spacing_mm"])
            common = min(len(tprof.values), len(profile.values))
            columns = {
                "depth_mm": profile.depth_mm[:common],
                "strain": profile.values[:common],
                "truth_strain": tprof.values[:common],
            }
        eio.write_csv(columns, out_dir / "esf.csv")
    else:
        eio.write_csv({"depth_mm": [], "strain": []}, out_dir / "esf.csv")
    _write_json(cfg, out_dir / "effective_evaluate.json")


def cmd_report(cfg: dict, out_dir: Path):
    rp = cfg["report"]
    loaded = []
    for path, label in zip(rp["reports"], rp["labels"]):
        with open(_resolve(path, out_dir)) as fh:
            loaded.append((label, json.load(fh)))
    layouts = {json.dumps((r.get("target_windows"), r.get("background_windows")))
               for _, r in loaded}
    if len(layouts) > 1:
        raise ValueError("reports do not share one window layout")
    lengths = {len(r.get("cnr_histogram", [])) for _, r in loaded}
    if len(lengths) > 1:
        raise ValueError(f"histogram lengths differ: {sorted(lengths)}")

    fields = ("snr", "cnr", "sr", "mean_ssim", "l2_error", "edge_resolution_mm")
    table = {"method": [label for label, _ in loaded]}
    for f in fields:
        table[f] = [r.get(f) if r.get(f) is not None else math.nan for _, r in loaded]
    table["mean_cnr_histogram"] = [
        float(np.nanmean(np.asarray(r["cnr_histogram"], dtype=np.float64)))
        if r.get("cnr_histogram") else math.nan
        for _, r in loaded
    ]
    eio.write_csv(table, out_dir / "comparison.csv")

    rows = {"method_a": [], "method_b": [], "t": [], "p": [], "degenerate": []}
    for ia in range(len(loaded)):
        for ib in range(ia + 1, len(loaded)):
            la, ra = loaded[ia]
            lb, rb = loaded[ib]
            ha = np.asarray([math.nan if v is None else v for v in ra["cnr_histogram"]])
            hb = np.asarray([math.nan if v is None else v for v in rb["cnr_histogram"]])
            ok = np.isfinite(ha) & np.isfinite(hb)
            result = emetrics.paired_t_test(ha[ok], hb[ok])
            rows["method_a"].append(la)
            rows["method_b"].append(lb)
            rows["t"].append(result.t)
            rows["p"].append(result.p)
            rows["degenerate"].append(result.degenerate)
    eio.write_csv(rows, out_dir / "ttests.csv")
    _write_json(cfg, out_dir / "effective_report.json")


_RUNNERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "strain": cmd_strain,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="elasto",
        description="Displacement and strain estimation pipeline for RF frame pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (default: cwd)")
        p.add_argument("--seed", type=int, default=None, help="override phantom.seed")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        print(f"error: io: {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: config: {args.config}: invalid JSON: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(args.out)
    try:
        cfg = expand_config(raw, args.command, seed_override=args.seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        _RUNNERS[args.command](cfg, out_dir)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except eio.FormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: run: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
