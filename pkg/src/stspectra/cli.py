"""Command line interface.

Subcommands: ingest, simulate, classical, spectra, partial, graph,
invert, pipeline.  A plain-text key=value config file can supply any
flag (explicit flags win).  Every artifact embeds the hash of the
resolved configuration plus grid, normalisation, and smoothing
metadata, and repeated runs with the same configuration and seed are
byte-identical.  Exit codes: 0 success, 1 runtime error (machine-
readable JSON report on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classical import (
    estimate_intensity,
    estimate_k,
    estimate_pair_correlation,
    estimate_spatial_intensity,
    estimate_temporal_intensity,
    mark_weighted_k,
)
from .errors import StspectraError, ValidationError
from .graph import (
    build_dependence_graph,
    calibrate_null_threshold,
    graph_to_dot,
    graph_to_json,
    partial_pipeline,
    per_slice_graphs,
)
from .ingest import (
    MultiPattern,
    export_events,
    load_events,
    rescale_to_unit_square,
)
from .inverse import inverse_transform, partial_lag_characteristics, scaled_covariance
from .partial import partial_cross_spectrum_direct, partial_field
from .simulate import SimSpec, simulate, write_sidecar
from .spectra import (
    FrequencyGrid,
    default_half_widths,
    dft,
    marked_dft,
    periodogram_matrix,
    r_spectrum,
    smooth_spectra,
    theta_spectrum,
)

THREADS_ENV = "STSPECTRA_THREADS"
CALIBRATION_SEED_OFFSET = 7654321


def _fmt(v) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# argument parsing


def _parse_colmap(text: str) -> dict[str, str]:
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"bad column mapping {part!r}")
        role, name = part.split("=", 1)
        out[role.strip()] = name.strip()
    return out


def _parse_window(text: str) -> tuple[float, float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("window needs x_min,x_max,y_min,y_max")
    return tuple(parts)


def _parse_float_list(text: str) -> tuple[float, ...]:
    if ":" in text:
        a, b, n = text.split(":")
        return tuple(np.linspace(float(a), float(b), int(n)).tolist())
    return tuple(float(v) for v in text.split(","))


def _parse_int_triple(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("need three comma-separated integers")
    return tuple(parts)


def _parse_pair(text: str) -> tuple[int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("need i,j")
    return tuple(parts)


def _parse_link(text: str) -> tuple[int, int, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("link needs i,j,offspring_rate,dispersion")
    return (int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]))


def _parse_label_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file (flags win)")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help=f"worker threads (default: ${THREADS_ENV} or 1); results are "
        "identical for any value",
    )
    parser.add_argument("--out", default=".", help="output directory")


def _add_pattern_input(parser: argparse.ArgumentParser, optional: bool = False) -> None:
    parser.add_argument(
        "input", nargs="?" if optional else None, help="events CSV file"
    )
    parser.add_argument(
        "--col",
        type=_parse_colmap,
        default=None,
        metavar="x=lon,y=lat,...",
        help="column remapping",
    )
    parser.add_argument(
        "--time-is-index",
        action="store_true",
        help="time column holds pre-binned integer steps",
    )
    parser.add_argument("--bin-width", default=None, help="e.g. 1d, 6h, 2w")
    parser.add_argument("--bin-origin", default=None, help="ISO-8601 origin")
    parser.add_argument(
        "--window",
        type=_parse_window,
        default=None,
        metavar="XMIN,XMAX,YMIN,YMAX",
        help="spatial window (default: data bounding box)",
    )


def _add_grid(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--p-max", type=int, default=16)
    parser.add_argument("--q-min", type=int, default=None)
    parser.add_argument("--q-max", type=int, default=None)
    parser.add_argument("--u-min", type=int, default=None)
    parser.add_argument("--u-max", type=int, default=None)
    parser.add_argument(
        "--include-dc",
        action="store_true",
        help="admit the (0,0,0) ordinate to sup/threshold statistics",
    )
    parser.add_argument(
        "--half-widths",
        type=_parse_int_triple,
        default=None,
        metavar="HP,HQ,HU",
        help="smoothing half-widths (default 1,1,0 for T<=4 else 1,1,1)",
    )
    parser.add_argument(
        "--normalisation", choices=["sqrt_counts", "none"], default="sqrt_counts"
    )
    parser.add_argument(
        "--marked",
        action="store_true",
        help="use mark-weighted transforms (needs a mark column)",
    )


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="stspectra",
        description="Frequency-domain dependence analysis of multitype "
        "spatio-temporal point patterns.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    p = subs.add_parser("ingest", help="validate, bin, rescale, and re-export events")
    _add_common(p)
    _add_pattern_input(p)
    registry["ingest"] = p

    p = subs.add_parser("simulate", help="generate patterns with known structure")
    _add_common(p)
    p.add_argument(
        "--kind",
        choices=["homogeneous_poisson", "linked_cluster"],
        default="homogeneous_poisson",
    )
    p.add_argument("--rates", type=_parse_float_list, metavar="R1,R2,...")
    p.add_argument("--T", type=int, default=4, dest="T")
    p.add_argument(
        "--link",
        type=_parse_link,
        action="append",
        default=None,
        metavar="I,J,RATE,DISP",
        help="linked-cluster pair (repeatable)",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mark-dist", default=None, metavar="normal:MU,SIGMA")
    registry["simulate"] = p

    p = subs.add_parser("classical", help="kernel intensity and second-order curves")
    _add_common(p)
    _add_pattern_input(p)
    p.add_argument(
        "--estimator",
        choices=["pair-correlation", "k", "mark-k", "intensity"],
        default="pair-correlation",
    )
    p.add_argument("--component", default=None, help="restrict to one component")
    p.add_argument("--C", type=_parse_label_list, default=None, help="first type set")
    p.add_argument("--D", type=_parse_label_list, default=None, help="second type set")
    p.add_argument(
        "--r-grid", type=_parse_float_list, default=(0.02, 0.04, 0.06, 0.08, 0.1)
    )
    p.add_argument("--t-grid", type=_parse_float_list, default=(1.0, 2.0))
    p.add_argument("--eps", type=float, default=None, help="spatial bandwidth")
    p.add_argument("--delta", type=float, default=None, help="temporal bandwidth")
    p.add_argument("--cells", type=int, default=64)
    p.add_argument(
        "--homogeneous",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="constant plug-in intensity (default); --no-homogeneous uses "
        "the separable kernel estimate",
    )
    registry["classical"] = p

    p = subs.add_parser("spectra", help="transforms, periodogram matrix, smoothing")
    _add_common(p)
    _add_pattern_input(p)
    _add_grid(p)
    p.add_argument(
        "--polar",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="also write radial and angular spectra",
    )
    registry["spectra"] = p

    p = subs.add_parser("partial", help="inverse spectral matrices and |d_ij|")
    _add_common(p)
    _add_pattern_input(p)
    _add_grid(p)
    registry["partial"] = p

    p = subs.add_parser("graph", help="dependence graph at a threshold")
    _add_common(p)
    _add_pattern_input(p)
    _add_grid(p)
    p.add_argument(
        "--xi",
        help="threshold value, or null:q95 for count-matched calibration",
    )
    p.add_argument("--per-slice", action="store_true")
    p.add_argument("--format", choices=["dot", "json", "both"], default="dot")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument(
        "--calibration-seed",
        type=int,
        default=CALIBRATION_SEED_OFFSET,
        help="base seed for null replicates",
    )
    registry["graph"] = p

    p = subs.add_parser("invert", help="lag-domain partial characteristics")
    _add_common(p)
    _add_pattern_input(p)
    _add_grid(p)
    p.add_argument(
        "--pair",
        type=_parse_pair,
        default=None,
        metavar="I,J",
        help="one pair with its conditioned autos (default: crosses of all pairs)",
    )
    p.add_argument(
        "--scaled",
        action="store_true",
        help="divide by sqrt(lambda_i * lambda_j) (homogeneous plug-in)",
    )
    registry["invert"] = p

    p = subs.add_parser("pipeline", help="full chain: events to graph artifacts")
    _add_common(p)
    _add_pattern_input(p, optional=True)
    _add_grid(p)
    p.add_argument(
        "--simulate",
        dest="simulate_spec",
        default=None,
        metavar="JSON",
        help="simulation spec (JSON file or inline) instead of an input CSV",
    )
    p.add_argument("--xi", help="threshold value or null:q95")
    p.add_argument("--per-slice", action="store_true")
    p.add_argument("--lags", action="store_true", help="also write lag-domain CSV")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--calibration-seed", type=int, default=CALIBRATION_SEED_OFFSET)
    registry["pipeline"] = p

    return parser, registry


# ---------------------------------------------------------------------------
# config file merge


def _read_config(path: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"config line without '=': {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _coerce(action: argparse.Action, text: str):
    if action.nargs == 0 or isinstance(action, argparse.BooleanOptionalAction):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"config key {action.dest!r} expects a boolean")
    ty = action.type or str
    return ty(text)


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill still-default options from the key=value config file."""
    if not getattr(args, "config", None):
        return
    cfg = _read_config(args.config)
    for key, text in cfg.items():
        dest = key.replace("-", "_")
        action = next((a for a in parser._actions if a.dest == dest), None)
        if action is None:
            raise ValidationError(f"unknown config key {key!r}")
        if getattr(args, dest, None) != parser.get_default(dest):
            continue
        setattr(args, dest, _coerce(action, text))


# ---------------------------------------------------------------------------
# shared plumbing


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        n = args.threads
    else:
        n = int(os.environ.get(THREADS_ENV, "1"))
    if n < 1:
        raise ValidationError("threads must be >= 1")
    return n


def _load_pattern(args) -> tuple[MultiPattern, object]:
    if not getattr(args, "input", None):
        raise ValidationError("an input CSV is required")
    pattern, report = load_events(
        args.input,
        columns=args.col,
        time_is_index=args.time_is_index,
        bin_width=args.bin_width,
        bin_origin=_parse_origin(args.bin_origin),
        window=args.window,
    )
    return rescale_to_unit_square(pattern), report


def _parse_origin(text):
    if text is None:
        return None
    from datetime import datetime

    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise ValidationError(f"bin origin {text!r} is not ISO-8601")


def _make_grid(args, T: int) -> FrequencyGrid:
    q_min = -16 if args.q_min is None else args.q_min
    q_max = 16 if args.q_max is None else args.q_max
    u_min = -((T - 1) // 2) if args.u_min is None else args.u_min
    u_max = T // 2 if args.u_max is None else args.u_max
    return FrequencyGrid(
        p_max=args.p_max,
        q_min=q_min,
        q_max=q_max,
        u_min=u_min,
        u_max=u_max,
        include_dc=args.include_dc,
    )


def _resolve_half_widths(args, T: int) -> tuple[int, int, int]:
    return args.half_widths if args.half_widths is not None else default_half_widths(T)


def _require_partial_dims(pattern: MultiPattern) -> None:
    if pattern.d < 3:
        raise ValidationError(
            f"partial analysis needs at least 3 components (got d={pattern.d}): "
            "conditioning on the remaining components is undefined otherwise"
        )


def _config_dict(args, extra: dict | None = None) -> dict:
    # threads is a resource knob; results are identical for any value, so it
    # must not perturb the recorded configuration or its hash
    skip = {"config", "out", "subcommand", "threads"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        if isinstance(value, tuple):
            value = list(value)
        out[key] = value
    if extra:
        out.update(extra)
    return out


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _provenance_comments(
    subcommand: str,
    cfg: dict,
    grid: FrequencyGrid | None = None,
    half_widths: tuple[int, int, int] | None = None,
    normalisation: str | None = None,
    prefix: str = "#",
) -> list[str]:
    lines = [
        f"{prefix} artifact=stspectra-{subcommand}",
        f"{prefix} config_hash={_config_hash(cfg)}",
    ]
    if grid is not None:
        g = grid.describe()
        lines.append(
            f"{prefix} grid=p:{g['p'][0]}..{g['p'][1]},"
            f"q:{g['q'][0]}..{g['q'][1]},u:{g['u'][0]}..{g['u'][1]},"
            f"dc:{'included' if g['include_dc'] else 'excluded'}"
        )
    if normalisation is not None:
        lines.append(f"{prefix} normalisation={normalisation}")
    if half_widths is not None:
        lines.append(
            f"{prefix} smoothing={half_widths[0]},{half_widths[1]},{half_widths[2]}"
        )
    if "seed" in cfg and cfg["seed"] is not None:
        lines.append(f"{prefix} seed={cfg['seed']}")
    return lines


def _write_csv(path: Path, comments: list[str], header: list[str], rows) -> None:
    import csv as _csv

    with path.open("w", newline="") as fh:
        for line in comments:
            fh.write(line + "\n")
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    pattern, report = _load_pattern(args)
    export_events(pattern, out / "events.csv")
    counts = pattern.counts
    w = pattern.window
    src_area = w.source_area
    doc = {
        "n_rows": report.n_rows,
        "n_events": report.n_events,
        "duplicates_removed": report.duplicates_removed,
        "message": f"{report.duplicates_removed} duplicate"
        f"{'' if report.duplicates_removed == 1 else 's'} removed",
        "d": pattern.d,
        "T": pattern.T,
        "labels": list(pattern.labels),
        "counts": {lab: int(c) for lab, c in zip(pattern.labels, counts)},
        "time_mode": report.time_mode,
        "window_source": list(w.source_extent or (0.0, 1.0, 0.0, 1.0)),
        "intensity_unit_square": {
            lab: float(c / pattern.T) for lab, c in zip(pattern.labels, counts)
        },
        "intensity_source_units": {
            lab: float(c / (src_area * pattern.T))
            for lab, c in zip(pattern.labels, counts)
        },
        "provenance": {"config_hash": _config_hash(_config_dict(args))},
    }
    (out / "ingest_report.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    print(f"loaded {pattern.n} events, d={pattern.d}, T={pattern.T}; "
          f"{report.duplicates_removed} duplicates removed")
    return 0


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    spec = SimSpec(
        kind=args.kind,
        rates=args.rates,
        T=args.T,
        link_pairs=tuple(args.link or ()),
        seed=args.seed,
        mark_dist=args.mark_dist,
    )
    result = simulate(spec)
    export_events(result.pattern, out / "events.csv")
    write_sidecar(result, out / "truth.json")
    edges = sorted(result.true_edges)
    print(f"simulated {result.pattern.n} events, d={spec.d}, T={spec.T}, "
          f"true edges: {edges if edges else 'none'}")
    return 0


def _component_source(pattern: MultiPattern, name: str | None):
    if name is None:
        return pattern.pooled(), ""
    if name.isdigit():
        idx = int(name)
    else:
        if name not in pattern.labels:
            raise ValidationError(f"unknown component label {name!r}")
        idx = pattern.labels.index(name) + 1
    return pattern.component(idx), pattern.labels[idx - 1]


def _separable_plugin(pattern: MultiPattern, args):
    """Per-type separable kernel intensities for the inhomogeneous plug-in."""
    per_type = {
        i: estimate_intensity(
            pattern.component(i), eps=args.eps, delta=args.delta, cells=args.cells
        )
        for i in range(1, pattern.d + 1)
    }

    def typed(x, y, t, type_id):
        out = np.empty(x.size)
        for i, est in per_type.items():
            sel = type_id == i
            if sel.any():
                out[sel] = est.at(x[sel], y[sel], t[sel])
        return out

    return typed, per_type


def cmd_classical(args) -> int:
    out = _out_dir(args)
    pattern, _ = _load_pattern(args)
    cfg = _config_dict(args)
    comments = _provenance_comments("classical", cfg)

    if args.estimator == "intensity":
        source, label = _component_source(pattern, args.component)
        surf = estimate_spatial_intensity(source, bandwidth=args.eps, cells=args.cells)
        rows = []
        for a, xc in enumerate(surf.x_centers):
            for b, yc in enumerate(surf.y_centers):
                rows.append([_fmt(xc), _fmt(yc), _fmt(surf.values[a, b])])
        _write_csv(
            out / "intensity_space.csv",
            comments + [f"# bandwidth={_fmt(surf.bandwidth)}", f"# mass={_fmt(surf.mass())}"],
            ["x", "y", "value"],
            rows,
        )
        temp = estimate_temporal_intensity(source, bandwidth=args.delta)
        _write_csv(
            out / "intensity_time.csv",
            comments + [f"# bandwidth={_fmt(temp.bandwidth)}"],
            ["t", "value"],
            [[str(int(s)), _fmt(v)] for s, v in zip(temp.steps, temp.values)],
        )
        print(f"intensity mass {surf.mass():.6g} over {source.n} events"
              f"{' of ' + label if label else ''}")
        return 0

    if args.estimator == "pair-correlation":
        source, label = _component_source(pattern, args.component)
        intensity = None
        if not args.homogeneous:
            est = estimate_intensity(
                source, eps=args.eps, delta=args.delta, cells=args.cells
            )
            intensity = est.at
        curve = estimate_pair_correlation(
            source,
            args.r_grid,
            args.t_grid,
            eps=args.eps,
            delta=args.delta,
            intensity=intensity,
        )
        cd = label
    elif args.estimator == "k":
        intensity = None
        if not args.homogeneous:
            intensity, _ = _separable_plugin(pattern, args)
        curve = estimate_k(
            pattern,
            args.r_grid,
            args.t_grid,
            C=args.C,
            D=args.D,
            intensity=intensity,
        )
        cd = None
    else:  # mark-k
        source, label = _component_source(pattern, args.component)
        curve = mark_weighted_k(source, args.r_grid, args.t_grid)
        cd = label

    if cd is None:
        c_str = "+".join(curve.meta.get("C", ()))
        d_str = "+".join(curve.meta.get("D", ()))
    else:
        c_str = d_str = cd
    rows = [
        [_fmt(r), _fmt(t), _fmt(v), curve.kind, c_str, d_str]
        for r, t, v in curve.rows()
    ]
    _write_csv(out / "curves.csv", comments, ["r", "t", "value", "kind", "C", "D"], rows)
    print(f"wrote {len(rows)} curve values ({curve.kind})")
    return 0


def _spectral_rows(field, kind: str):
    grid = field.grid
    p, q, u = grid.p_values, grid.q_values, grid.u_values
    d = field.d
    rows = []
    for i in range(1, d + 1):
        for j in range(i, d + 1):
            block = field.values[..., i - 1, j - 1]
            for a in range(p.size):
                for b in range(q.size):
                    for c in range(u.size):
                        v = block[a, b, c]
                        rows.append(
                            [
                                str(p[a]),
                                str(q[b]),
                                str(u[c]),
                                str(i),
                                str(j),
                                _fmt(v.real),
                                _fmt(v.imag),
                                kind,
                            ]
                        )
    return rows


def cmd_spectra(args) -> int:
    out = _out_dir(args)
    pattern, _ = _load_pattern(args)
    grid = _make_grid(args, pattern.T)
    hw = _resolve_half_widths(args, pattern.T)
    threads = _threads(args)
    cfg = _config_dict(args, {"resolved_half_widths": list(hw)})
    comments = _provenance_comments(
        "spectra", cfg, grid=grid, half_widths=hw, normalisation=args.normalisation
    )

    dfts = dft(pattern, grid, threads=threads)
    raw = periodogram_matrix(dfts, normalisation=args.normalisation)
    smoothed = smooth_spectra(raw, hw)
    rows = _spectral_rows(raw, "raw") + _spectral_rows(smoothed, "smoothed")
    if args.marked:
        mdft = marked_dft(pattern, grid, threads=threads)
        msm = smooth_spectra(
            periodogram_matrix(mdft, normalisation=args.normalisation), hw
        )
        rows += _spectral_rows(msm, "marked")
    _write_csv(
        out / "spectra.csv",
        comments,
        ["p", "q", "u", "i", "j", "re", "im", "kind"],
        rows,
    )

    if args.polar:
        prows = []
        for i in range(1, pattern.d + 1):
            auto = smoothed.entry(i, i).real
            for spec_kind, pol in (
                ("radius", r_spectrum(auto, grid)),
                ("angle", theta_spectrum(auto, grid)),
            ):
                for k, bin_v in enumerate(pol.bins):
                    for c, uv in enumerate(pol.u_values):
                        prows.append(
                            [
                                spec_kind,
                                str(i),
                                str(int(bin_v)),
                                str(int(uv)),
                                _fmt(pol.values[k, c]),
                                str(int(pol.counts[k])),
                            ]
                        )
        _write_csv(
            out / "polar.csv",
            comments,
            ["kind", "i", "bin", "u", "value", "count"],
            prows,
        )
    print(f"wrote {len(rows)} spectral rows on grid {grid.shape}")
    return 0


def _partial_rows(pf):
    grid = pf.grid
    p, q, u = grid.p_values, grid.q_values, grid.u_values
    d = len(pf.labels)
    rows = []
    for i in range(1, d + 1):
        for j in range(i + 1, d + 1):
            coh = pf.coherency[..., i - 1, j - 1]
            mag = pf.abs_d[..., i - 1, j - 1]
            for a in range(p.size):
                for b in range(q.size):
                    for c in range(u.size):
                        v = coh[a, b, c]
                        rows.append(
                            [
                                str(p[a]),
                                str(q[b]),
                                str(u[c]),
                                str(i),
                                str(j),
                                _fmt(v.real),
                                _fmt(v.imag),
                                _fmt(mag[a, b, c]),
                                _fmt(pf.ridge[a, b, c]),
                            ]
                        )
    return rows


def cmd_partial(args) -> int:
    out = _out_dir(args)
    pattern, _ = _load_pattern(args)
    _require_partial_dims(pattern)
    grid = _make_grid(args, pattern.T)
    hw = _resolve_half_widths(args, pattern.T)
    cfg = _config_dict(args, {"resolved_half_widths": list(hw)})
    comments = _provenance_comments(
        "partial", cfg, grid=grid, half_widths=hw, normalisation=args.normalisation
    )
    pf = partial_pipeline(
        pattern,
        grid=grid,
        half_widths=hw,
        threads=_threads(args),
        normalisation=args.normalisation,
        marked=args.marked,
    )
    rows = _partial_rows(pf)
    _write_csv(
        out / "partial.csv",
        comments,
        ["p", "q", "u", "i", "j", "re", "im", "abs_d", "ridge"],
        rows,
    )
    n_ridge = int((pf.ridge > 0).sum())
    print(f"wrote {len(rows)} partial rows; ridge applied at {n_ridge} ordinates")
    return 0


def _resolve_xi(args, pattern, grid, hw, threads):
    text = str(args.xi)
    if text.startswith("null:"):
        tag = text.split(":", 1)[1]
        if tag != "q95":
            raise ValidationError(f"unknown calibration spec {text!r}; use null:q95")
        cal = calibrate_null_threshold(
            tuple(int(c) for c in pattern.counts),
            pattern.T,
            grid=grid,
            half_widths=hw,
            quantile=0.95,
            replicates=args.replicates,
            seed=args.calibration_seed,
            threads=threads,
            include_dc=args.include_dc,
            normalisation=args.normalisation,
        )
        return cal.xi, cal
    try:
        return float(text), None
    except ValueError:
        raise ValidationError(f"threshold {text!r} is neither a number nor null:q95")


def _graph_provenance(args, cfg, grid, hw, xi, cal):
    prov = {
        "config_hash": _config_hash(cfg),
        "grid": grid.describe(),
        "normalisation": args.normalisation,
        "smoothing": list(hw),
        "xi": xi,
    }
    if cal is not None:
        prov["calibration"] = {
            "quantile": cal.quantile,
            "replicates": cal.replicates,
            "seed": cal.seed,
        }
    return prov


def _emit_graph(out, name, graph, fmt, comments):
    wrote = []
    if fmt in ("dot", "both"):
        path = out / f"{name}.dot"
        body = "".join(line + "\n" for line in comments) + graph_to_dot(graph)
        path.write_text(body)
        wrote.append(path.name)
    if fmt in ("json", "both"):
        path = out / f"{name}.json"
        path.write_text(graph_to_json(graph))
        wrote.append(path.name)
    return wrote


def cmd_graph(args) -> int:
    out = _out_dir(args)
    pattern, _ = _load_pattern(args)
    _require_partial_dims(pattern)
    grid = _make_grid(args, pattern.T)
    hw = _resolve_half_widths(args, pattern.T)
    threads = _threads(args)
    xi, cal = _resolve_xi(args, pattern, grid, hw, threads)
    cfg = _config_dict(args, {"resolved_half_widths": list(hw), "resolved_xi": xi})
    comments = _provenance_comments(
        "graph",
        cfg,
        grid=grid,
        half_widths=hw,
        normalisation=args.normalisation,
        prefix="//",
    )
    prov = _graph_provenance(args, cfg, grid, hw, xi, cal)
    pf = partial_pipeline(
        pattern,
        grid=grid,
        half_widths=hw,
        threads=threads,
        normalisation=args.normalisation,
        marked=args.marked,
    )
    graph = build_dependence_graph(pf, xi, include_dc=args.include_dc, provenance=prov)
    wrote = _emit_graph(out, "graph", graph, args.format, comments)

    if args.per_slice:
        slices = per_slice_graphs(
            pattern,
            xi,
            grid=grid,
            half_widths=(hw[0], hw[1], 0),
            threads=threads,
            include_dc=args.include_dc,
            normalisation=args.normalisation,
        )
        rows = []
        for (i, j), flags in sorted(slices.persistence.items()):
            for step0, present in enumerate(flags):
                g = slices.graphs[step0]
                stat = "" if g is None else _fmt(g.stats[i - 1, j - 1])
                rows.append(
                    [
                        str(step0 + 1),
                        str(i),
                        str(j),
                        pattern.labels[i - 1],
                        pattern.labels[j - 1],
                        stat,
                        {True: "1", False: "0", None: ""}[present],
                    ]
                )
        csv_comments = [c.replace("//", "#", 1) for c in comments]
        _write_csv(
            out / "persistence.csv",
            csv_comments,
            ["slice", "i", "j", "label_i", "label_j", "stat", "present"],
            rows,
        )
        for step0, g in enumerate(slices.graphs):
            if g is not None:
                _emit_graph(out, f"slice_{step0 + 1}", g, args.format, comments)
    print(
        f"graph at xi={_fmt(xi)}: "
        f"{len(graph.edges)} edge{'s' if len(graph.edges) != 1 else ''} "
        f"({', '.join('-'.join(e) for e in graph.edge_labels) or 'none'}); "
        f"wrote {', '.join(wrote)}"
    )
    return 0


def _lag_rows(lag, i, j, kind):
    rows = []
    for a, cx in enumerate(lag.c_x):
        for b, cy in enumerate(lag.c_y):
            for c, hv in enumerate(lag.h):
                rows.append(
                    [
                        _fmt(cx),
                        _fmt(cy),
                        str(int(hv)),
                        str(i),
                        str(j),
                        _fmt(lag.values[a, b, c]),
                        kind,
                    ]
                )
    return rows


def cmd_invert(args) -> int:
    out = _out_dir(args)
    pattern, _ = _load_pattern(args)
    grid = _make_grid(args, pattern.T)
    hw = _resolve_half_widths(args, pattern.T)
    threads = _threads(args)
    cfg = _config_dict(args, {"resolved_half_widths": list(hw)})
    comments = _provenance_comments(
        "invert", cfg, grid=grid, half_widths=hw, normalisation=args.normalisation
    )
    if args.marked:
        dfts = marked_dft(pattern, grid, threads=threads)
    else:
        dfts = dft(pattern, grid, threads=threads)
    smoothed = smooth_spectra(
        periodogram_matrix(dfts, normalisation=args.normalisation), hw
    )
    lam = {i: float(pattern.counts[i - 1] / pattern.T) for i in range(1, pattern.d + 1)}

    rows = []
    if args.pair is not None:
        i, j = args.pair
        lags = partial_lag_characteristics(smoothed, i, j)
        parts = [
            (lags.auto_i, i, i),
            (lags.auto_j, j, j),
            (lags.cross, i, j),
        ]
        for lag, a, b in parts:
            if args.scaled:
                lag = scaled_covariance(lag, lam[a], lam[b])
            rows += _lag_rows(lag, a, b, lag.kind)
    else:
        for i in range(1, pattern.d + 1):
            for j in range(i + 1, pattern.d + 1):
                pc = partial_cross_spectrum_direct(smoothed, i, j)
                lag = inverse_transform(
                    pc.cross, grid, pattern.T, kind="partial_cross", pair=(i, j)
                )
                if args.scaled:
                    lag = scaled_covariance(lag, lam[i], lam[j])
                rows += _lag_rows(lag, i, j, lag.kind)
    _write_csv(
        out / "lags.csv",
        comments,
        ["c_x", "c_y", "h", "i", "j", "value", "kind"],
        rows,
    )
    print(f"wrote {len(rows)} lag rows")
    return 0


def cmd_pipeline(args) -> int:
    out = _out_dir(args)
    if args.simulate_spec and args.input:
        raise ValidationError("give an input CSV or --simulate, not both")
    truth = None
    if args.simulate_spec:
        text = args.simulate_spec
        doc = json.loads(text if text.lstrip().startswith("{") else Path(text).read_text())
        if "spec" in doc:
            doc = doc["spec"]
        spec = SimSpec.from_dict(doc)
        result = simulate(spec)
        pattern = result.pattern
        truth = result
    else:
        pattern, _ = _load_pattern(args)
    _require_partial_dims(pattern)

    grid = _make_grid(args, pattern.T)
    hw = _resolve_half_widths(args, pattern.T)
    threads = _threads(args)
    xi, cal = _resolve_xi(args, pattern, grid, hw, threads)
    cfg = _config_dict(args, {"resolved_half_widths": list(hw), "resolved_xi": xi})
    comments = _provenance_comments(
        "pipeline", cfg, grid=grid, half_widths=hw, normalisation=args.normalisation
    )

    export_events(pattern, out / "events.csv")
    if truth is not None:
        write_sidecar(truth, out / "truth.json")

    if args.marked:
        dfts = marked_dft(pattern, grid, threads=threads)
    else:
        dfts = dft(pattern, grid, threads=threads)
    raw = periodogram_matrix(dfts, normalisation=args.normalisation)
    smoothed = smooth_spectra(raw, hw)
    _write_csv(
        out / "spectra.csv",
        comments,
        ["p", "q", "u", "i", "j", "re", "im", "kind"],
        _spectral_rows(raw, "raw") + _spectral_rows(smoothed, "smoothed"),
    )

    pf = partial_field(smoothed)
    _write_csv(
        out / "partial.csv",
        comments,
        ["p", "q", "u", "i", "j", "re", "im", "abs_d", "ridge"],
        _partial_rows(pf),
    )

    prov = _graph_provenance(args, cfg, grid, hw, xi, cal)
    graph = build_dependence_graph(pf, xi, include_dc=args.include_dc, provenance=prov)
    dot_comments = [c.replace("#", "//", 1) for c in comments]
    _emit_graph(out, "graph", graph, "both", dot_comments)

    if args.per_slice:
        slices = per_slice_graphs(
            pattern,
            xi,
            grid=grid,
            half_widths=(hw[0], hw[1], 0),
            threads=threads,
            include_dc=args.include_dc,
            normalisation=args.normalisation,
        )
        rows = []
        for (i, j), flags in sorted(slices.persistence.items()):
            for step0, present in enumerate(flags):
                g = slices.graphs[step0]
                stat = "" if g is None else _fmt(g.stats[i - 1, j - 1])
                rows.append(
                    [
                        str(step0 + 1),
                        str(i),
                        str(j),
                        pattern.labels[i - 1],
                        pattern.labels[j - 1],
                        stat,
                        {True: "1", False: "0", None: ""}[present],
                    ]
                )
        _write_csv(
            out / "persistence.csv",
            comments,
            ["slice", "i", "j", "label_i", "label_j", "stat", "present"],
            rows,
        )
        for step0, g in enumerate(slices.graphs):
            if g is not None:
                _emit_graph(out, f"slice_{step0 + 1}", g, "both", dot_comments)

    if args.lags:
        rows = []
        for i in range(1, pattern.d + 1):
            for j in range(i + 1, pattern.d + 1):
                pc = partial_cross_spectrum_direct(smoothed, i, j)
                lag = inverse_transform(
                    pc.cross, grid, pattern.T, kind="partial_cross", pair=(i, j)
                )
                rows += _lag_rows(lag, i, j, lag.kind)
        _write_csv(
            out / "lags.csv",
            comments,
            ["c_x", "c_y", "h", "i", "j", "value", "kind"],
            rows,
        )

    run = {
        "tool": "stspectra pipeline",
        "version": __version__,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "n": pattern.n,
        "d": pattern.d,
        "T": pattern.T,
        "counts": {lab: int(c) for lab, c in zip(pattern.labels, pattern.counts)},
        "xi": xi,
        "edges": [list(e) for e in graph.edge_labels],
        "warnings": list(graph.warnings),
    }
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    print(
        f"pipeline done: n={pattern.n}, d={pattern.d}, T={pattern.T}, "
        f"xi={_fmt(xi)}, edges: "
        f"{', '.join('-'.join(e) for e in graph.edge_labels) or 'none'}"
    )
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "simulate": cmd_simulate,
    "classical": cmd_classical,
    "spectra": cmd_spectra,
    "partial": cmd_partial,
    "graph": cmd_graph,
    "invert": cmd_invert,
    "pipeline": cmd_pipeline,
}

# required options are only enforced after the config merge, so a config file
# can supply them; flags still win when both are given
REQUIRED_AFTER_MERGE = {
    "simulate": ("rates",),
    "graph": ("xi",),
    "pipeline": ("xi",),
}


def main(argv: list[str] | None = None) -> int:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config(args, registry[args.subcommand])
        for dest in REQUIRED_AFTER_MERGE.get(args.subcommand, ()):
            if getattr(args, dest, None) is None:
                registry[args.subcommand].error(
                    f"--{dest.replace('_', '-')} is required (flag or config file)"
                )
        return COMMANDS[args.subcommand](args)
    except StspectraError as exc:
        sys.stderr.write(json.dumps(exc.report(), sort_keys=True) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(
            json.dumps({"error": "io", "message": str(exc)}, sort_keys=True) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
