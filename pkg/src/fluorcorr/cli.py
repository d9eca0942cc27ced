"""Command-line front end.

Subcommands cover the stages of the measurement: ``theory`` writes
regression-theorem curves, ``simulate`` synthesises detector click streams,
``correlate`` histograms them, ``analyze`` calibrates phases and extracts
the field correlations, and ``pipeline`` chains everything.  Exit codes:
0 success, 2 configuration errors, 3 numerical failures, 4 statistics or
calibration failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, parse_config, phase_label, preset_config
from .correlator import (calibrate_phases, cross_correlate, normalize,
                         read_histogram, write_histogram)
from .curves import CorrelationCurve, read_curve, write_curve
from .errors import CalibrationError, ConfigError, FluorcorrError
from .homodyne import (compose_gtotal, derive, extract_inphase,
                       extract_quadrature, phase_jitter_average)
from .liouville import CorrelationEngine
from .trajectory import read_tags, synthesize, write_tags

_EXTRACTION_TARGETS = (("inphase", 0.0), ("quadrature", math.pi / 2), ("antiphase", math.pi))
_ROLE_LABELS = {"inphase": "000", "quadrature": "090", "antiphase": "180"}
_ASSIGN_TOL = 0.35  # rad; max distance between a calibrated phase and its role


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_run_config(args) -> RunConfig:
    if args.preset:
        return parse_config(preset_config(args.preset))
    return load_config(args.config)


def _theory_curves(cfg: RunConfig) -> dict:
    """All theory curves of a run, on the analysis bin-centre grid."""
    eng = CorrelationEngine(cfg.model)
    taus = cfg.bin_centers()
    g2 = eng.g2(taus)
    derived = derive(cfg.detection(), eng.rho_ss, cfg.model.sigma_det)
    out = {"g2": g2}
    for phi in cfg.lo_phases:
        if cfg.phase_jitter > 0:
            g15 = phase_jitter_average(lambda p: eng.g15(p, taus), phi, cfg.phase_jitter)
        else:
            g15 = eng.g15(phi, taus)
        gtot = compose_gtotal(g2, g15, derived.visibility, derived.intensity_ratio)
        gtot.meta.update(prefactor=derived.prefactor,
                         norm=derived.prefactor * (1 - derived.visibility),
                         nominal_phi=phi, config=cfg.hash)
        g15.meta.update(nominal_phi=phi, config=cfg.hash)
        label = phase_label(phi)
        out[f"g15_phi{label}"] = g15
        out[f"gtotal_phi{label}"] = gtot
    return out


def cmd_theory(args) -> None:
    cfg = _load_run_config(args)
    out = _outdir(args.out)
    for name, curve in _theory_curves(cfg).items():
        path = out / f"{name}.csv"
        write_curve(curve, path)
        print(f"wrote {path}")


def _phase_seeds(seed: int, n: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def cmd_simulate(args) -> None:
    cfg = _load_run_config(args)
    out = _outdir(args.out)
    seed = cfg.seed if args.seed is None else args.seed
    for phi, pseed in zip(cfg.lo_phases, _phase_seeds(seed, len(cfg.lo_phases))):
        start, stop = synthesize(cfg.model, cfg.detection(phi), cfg.duration, pseed,
                                 quantization_ps=cfg.quantization_ps,
                                 n_segments=cfg.n_segments)
        label = phase_label(phi)
        for stream, name in ((start, "start"), (stop, "stop")):
            path = out / f"{name}_phi{label}.dctag"
            write_tags(stream, path, cfg.hash)
            print(f"wrote {path} ({stream.tags.size} tags)")


def _read_tag_pair(tags_dir: Path, label: str):
    start_path = tags_dir / f"start_phi{label}.dctag"
    stop_path = tags_dir / f"stop_phi{label}.dctag"
    for p in (start_path, stop_path):
        if not p.exists():
            raise ConfigError(f"missing tag file {p}")
    try:
        return read_tags(start_path), read_tags(stop_path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _histograms_from_tags(cfg: RunConfig, tags_dir: Path) -> dict:
    hists = {}
    for phi in cfg.lo_phases:
        label = phase_label(phi)
        start, stop = _read_tag_pair(tags_dir, label)
        hist = cross_correlate(start, stop, cfg.bin_width, cfg.tau_max)
        hist.meta["nominal_phi"] = phi
        hists[label] = hist
    return hists


def cmd_correlate(args) -> None:
    cfg = _load_run_config(args)
    out = _outdir(args.out)
    for label, hist in _histograms_from_tags(cfg, Path(args.tags)).items():
        path = out / f"hist_phi{label}.csv"
        write_histogram(hist, path)
        print(f"wrote {path} ({int(hist.counts.sum())} pairs)")


def _assign_roles(cal_phases: dict) -> dict:
    """Map calibrated phases onto the extraction roles 0, pi/2, pi."""
    roles = {}
    for role, target in _EXTRACTION_TARGETS:
        label = min(cal_phases, key=lambda k: abs(cal_phases[k] - target))
        if abs(cal_phases[label] - target) > _ASSIGN_TOL:
            raise CalibrationError(
                f"no run has a calibrated phase within {_ASSIGN_TOL} rad of "
                f"{target:.3f} ({role}); got {sorted(cal_phases.values())}"
            )
        roles[role] = label
    if len(set(roles.values())) != len(roles):
        raise CalibrationError(
            f"calibrated phases {cal_phases} do not separate the three "
            "extraction roles (0, pi/2, pi)"
        )
    return roles


def _analyze(cfg: RunConfig, out: Path, *, tags_dir: Path | None,
             theory_dir: Path | None) -> dict:
    nominal = {phase_label(p): p for p in cfg.lo_phases}
    if theory_dir is not None:
        sources = {}
        for label in nominal:
            path = theory_dir / f"gtotal_phi{label}.csv"
            if not path.exists():
                raise ConfigError(f"missing theory curve {path}")
            sources[label] = read_curve(path)
    else:
        sources = _histograms_from_tags(cfg, tags_dir)

    cal = calibrate_phases(sources, tail_window=cfg.tail_window)
    roles = _assign_roles(cal.phases)

    curves = {}
    for role, label in roles.items():
        src = sources[label]
        if theory_dir is not None:
            curve = src
        else:
            curve = normalize(src, normalizer_per_start=cal.normalizer_per_start,
                              kind="gtotal", phi=cal.phases[label])
        corrected = abs(cal.phases[label] - nominal[label]) > _ASSIGN_TOL
        curve.meta.update(nominal_label=label, nominal_phi=nominal[label],
                          assigned_phi=cal.phases[label], corrected=corrected,
                          role=role, config=cfg.hash)
        curves[role] = curve
        path = out / f"gtotal_phi{_ROLE_LABELS[role]}.csv"
        write_curve(curve, path)
        print(f"wrote {path}")

    g15_in = extract_inphase(curves["inphase"], curves["antiphase"], cal.visibility)
    g15_quad = extract_quadrature(curves["inphase"], curves["quadrature"],
                                  curves["antiphase"], cal.visibility)
    for curve, name in ((g15_in, "g15_inphase"), (g15_quad, "g15_quadrature")):
        curve.meta["config"] = cfg.hash
        path = out / f"{name}.csv"
        write_curve(curve, path)
        print(f"wrote {path}")

    report = {
        "visibility": cal.visibility,
        "normalizer_per_start": cal.normalizer_per_start,
        "roles": {role: roles[role] for role, _ in _EXTRACTION_TARGETS},
        "runs": {
            label: {
                "nominal_phi": nominal[label],
                "assigned_phi": cal.phases[label],
                "asymptote_per_start": cal.asymptotes[label],
                "asymptote_stderr": cal.stderrs[label],
                "corrected": bool(abs(cal.phases[label] - nominal[label]) > _ASSIGN_TOL),
            }
            for label in sources
        },
        "config": cfg.hash,
    }
    path = out / "calibration.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")
    return {"curves": curves, "calibration": report,
            "g15_inphase": g15_in, "g15_quadrature": g15_quad}


def cmd_analyze(args) -> None:
    cfg = _load_run_config(args)
    out = _outdir(args.out)
    tags_dir = Path(args.tags) if args.tags else None
    theory_dir = Path(args.from_theory) if args.from_theory else None
    _analyze(cfg, out, tags_dir=tags_dir, theory_dir=theory_dir)


def cmd_pipeline(args) -> None:
    cfg = _load_run_config(args)
    out = _outdir(args.out)
    seed = cfg.seed if args.seed is None else args.seed

    tags_dir = _outdir(out / "tags")
    for phi, pseed in zip(cfg.lo_phases, _phase_seeds(seed, len(cfg.lo_phases))):
        start, stop = synthesize(cfg.model, cfg.detection(phi), cfg.duration, pseed,
                                 quantization_ps=cfg.quantization_ps,
                                 n_segments=cfg.n_segments)
        label = phase_label(phi)
        write_tags(start, tags_dir / f"start_phi{label}.dctag", cfg.hash)
        write_tags(stop, tags_dir / f"stop_phi{label}.dctag", cfg.hash)
    print(f"wrote tag streams to {tags_dir}")

    hists = _histograms_from_tags(cfg, tags_dir)
    for label, hist in hists.items():
        write_histogram(hist, out / f"hist_phi{label}.csv")

    theory_dir = _outdir(out / "theory")
    theory = _theory_curves(cfg)
    for name, curve in theory.items():
        write_curve(curve, theory_dir / f"{name}.csv")
    print(f"wrote theory curves to {theory_dir}")

    result = _analyze(cfg, out, tags_dir=tags_dir, theory_dir=None)

    summary = {"config": cfg.hash, "seed": seed, "chi2_per_bin": {}}
    for role, _ in _EXTRACTION_TARGETS:
        label = _ROLE_LABELS[role]
        data = result["curves"][role]
        th = theory.get(f"gtotal_phi{label}")
        if th is None or not data.same_grid(th):
            continue
        mask = data.stderr > 0
        if mask.any():
            chi2 = float(np.mean(((data.values[mask] - th.values[mask])
                                  / data.stderr[mask]) ** 2))
            summary["chi2_per_bin"][label] = chi2
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluorcorr",
        description="Conditioned homodyne photon-correlation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, tags=False, seed=False):
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--config", help="path to a JSON run configuration")
        group.add_argument("--preset", help="name of a built-in configuration")
        p.add_argument("--out", required=True, help="output directory")
        if tags:
            p.add_argument("--tags", required=True, help="directory with .dctag streams")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the configured RNG seed")

    p = sub.add_parser("theory", help="write regression-theorem curves")
    add_common(p)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="synthesise detector click streams")
    add_common(p, seed=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="histogram start-stop coincidences")
    add_common(p, tags=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("analyze", help="calibrate phases and extract field correlations")
    add_common(p)
    p.add_argument("--tags", help="directory with .dctag streams")
    p.add_argument("--from-theory", dest="from_theory",
                   help="directory with theory gtotal curves (identity check)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pipeline", help="simulate, correlate, analyze, and compare")
    add_common(p, seed=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "analyze":
        if bool(args.tags) == bool(args.from_theory):
            parser.error("analyze needs exactly one of --tags or --from-theory")
    try:
        args.func(args)
    except FluorcorrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
