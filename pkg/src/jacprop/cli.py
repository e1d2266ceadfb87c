"""Command-line front end for the theory, ensemble and fitting pipelines.

Every command is deterministic given its flags (including ``--seed``),
emits CSV with '#'-prefixed header comments carrying the full run
configuration, or flat JSON with "inf"/"nan" spelled as strings.  Exit
codes: 0 on success, 2 on usage errors, 1 on runtime failures.  A JSON
file passed via ``--config`` overrides the corresponding flags, and the
``JACPROP_WORKERS`` environment variable caps ensemble worker threads.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import math
import sys

import numpy as np

from . import __version__
from .activations import Activation
from .analysis import fit_exponential, fit_power_law, phase_grid
from .critical import critical_line, critical_point
from .ensemble import (
    EnsembleConfig,
    NetworkParams,
    empirical_chi,
    empirical_ntk,
    jacobian_profile,
    n0_correction_check,
    resolve_input,
)
from .meanfield import Hyper, NormMode, trace

_MODES = {"vanilla": NormMode.VANILLA, "pre-ln": NormMode.PRE_LN, "post-ln": NormMode.POST_LN}


def parse_activation(text: str) -> Activation:
    """Flag vocabulary: relu | erf | gelu | scale-invariant:a+:a-."""
    if text == "relu":
        return Activation.relu()
    if text == "erf":
        return Activation.erf()
    if text == "gelu":
        return Activation.gelu()
    if text.startswith("scale-invariant:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(
                f"expected scale-invariant:a+:a-, got {text!r}"
            )
        return Activation.scale_invariant(float(parts[1]), float(parts[2]))
    raise argparse.ArgumentTypeError(f"unknown activation {text!r}")


def parse_mode(text: str) -> NormMode:
    try:
        return _MODES[text]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown mode {text!r}; choose from {sorted(_MODES)}"
        ) from None


def _fmt(v) -> str:
    """Round-trip-safe scalar formatting for CSV cells."""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    return obj


@contextlib.contextmanager
def _open_out(args):
    if args.out:
        with open(args.out, "w") as f:
            yield f
    else:
        yield sys.stdout  # never closed


def _emit_csv(stream, command: str, config: dict, columns: list, rows) -> None:
    print(f"# jacprop {__version__}", file=stream)
    print(f"# command: {command}", file=stream)
    cfg = " ".join(f"{k}={_fmt(v)}" for k, v in config.items())
    print(f"# config: {cfg}", file=stream)
    print(",".join(columns), file=stream)
    for row in rows:
        print(",".join(_fmt(v) for v in row), file=stream)


def _emit_json(stream, command: str, config: dict, payload: dict) -> None:
    doc = {"jacprop": __version__, "command": command, "config": _json_safe(config)}
    doc.update(_json_safe(payload))
    json.dump(doc, stream, indent=2)
    stream.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_theory_trace(args) -> int:
    act = parse_activation(args.act)
    mode = parse_mode(args.mode)
    hp = Hyper(args.sw, args.sb)
    tr = trace(act, mode, hp, args.depth, args.k0, l0=args.l0,
               ntk_kernel_lag=args.ntk_lag)
    config = dict(act=args.act, mode=args.mode, sw=args.sw, sb=args.sb,
                  depth=args.depth, k0=args.k0, l0=args.l0, ntk_lag=args.ntk_lag)
    rows = [
        (l, tr.K[l], tr.chi_j[l], tr.chi_delta[l], tr.J[l], tr.theta[l])
        for l in range(1, args.depth + 1)
    ]
    with _open_out(args) as out:
        _emit_csv(out, "theory-trace", config,
                  ["l", "K", "chi_j", "chi_delta", "J", "Theta"], rows)
    return 0


def _cmd_critical(args) -> int:
    act = parse_activation(args.act)
    mode = parse_mode(args.mode)
    config = dict(act=args.act, mode=args.mode, tol=args.tol)
    if args.point:
        points = critical_point(act, mode)
    else:
        sweep = np.linspace(args.sw_min, args.sw_max, args.sw_steps)
        config.update(sw_min=args.sw_min, sw_max=args.sw_max, sw_steps=args.sw_steps)
        points = critical_line(act, mode, sweep, tol=args.tol)
    rows = [(p.sigma_w, p.sigma_b, p.residual, p.k_star) for p in points]
    with _open_out(args) as out:
        _emit_csv(out, "critical", config,
                  ["sigma_w", "sigma_b", "residual", "K_star"], rows)
    return 0


def _cmd_phase_diagram(args) -> int:
    act = parse_activation(args.act)
    mode = parse_mode(args.mode)
    sw = np.sqrt(np.linspace(args.sw2_min, args.sw2_max, args.resolution))
    sb = np.sqrt(np.linspace(args.sb2_min, args.sb2_max, args.resolution))
    grid = phase_grid(act, mode, sw, sb)
    config = dict(act=args.act, mode=args.mode, sw2_min=args.sw2_min,
                  sw2_max=args.sw2_max, sb2_min=args.sb2_min,
                  sb2_max=args.sb2_max, resolution=args.resolution)
    rows = [
        (grid.sigma_w[i] ** 2, grid.sigma_b[j] ** 2, grid.chi[i, j])
        for i in range(grid.sigma_w.size)
        for j in range(grid.sigma_b.size)
    ]
    with _open_out(args) as out:
        _emit_csv(out, "phase-diagram", config,
                  ["sigma_w_sq", "sigma_b_sq", "chi"], rows)
    return 0


def _mc_config(args) -> EnsembleConfig:
    if args.input_file:
        source = ("file", args.input_file)
    else:
        source = ("gaussian", args.input_mean, args.input_std)
    return EnsembleConfig(
        width=args.width,
        input_dim=args.input_dim,
        depth=args.depth,
        n_init=args.n_init,
        seed=args.seed,
        hyper=Hyper(args.sw, args.sb),
        norm=parse_mode(args.mode),
        act=parse_activation(args.act),
        groups=args.groups,
        input_source=source,
        resample_inputs=args.resample_inputs,
    )


def _cmd_mc(args) -> int:
    cfg = _mc_config(args)
    config = dict(
        task=args.task, act=args.act, mode=args.mode, sw=args.sw, sb=args.sb,
        width=args.width, input_dim=args.input_dim, depth=args.depth,
        n_init=args.n_init, seed=args.seed, groups=args.groups,
        input_mean=args.input_mean, input_std=args.input_std,
        input_file=args.input_file or "", resample_inputs=args.resample_inputs,
        l0=args.l0,
    )
    if args.task == "chi":
        est = empirical_chi(cfg)
        payload = {"mean": est.mean, "stderr": est.stderr, "n": est.n}
    elif args.task == "profile":
        est = jacobian_profile(cfg, l0=args.l0)
        series = args.series_out or (args.out or "profile") + ".series.csv"
        rows = [
            (l, est.per_layer[l], est.per_layer_stderr[l])
            for l in range(args.l0 + 1, cfg.depth + 1)
        ]
        with open(series, "w") as out:
            _emit_csv(out, "mc profile", config, ["l", "J_mean", "J_stderr"], rows)
        payload = {"mean": est.mean, "stderr": est.stderr, "n": est.n,
                   "series": series}
    elif args.task == "ntk":
        vals = []
        for i in range(cfg.n_init):
            params = NetworkParams.draw(cfg.layer_dims, cfg.seed, i)
            x = resolve_input(cfg, i)
            vals.append(empirical_ntk(params, cfg.act, cfg.hyper, cfg.norm, x,
                                      groups=cfg.groups))
        vals = np.asarray(vals)
        payload = {
            "mean": float(vals.mean()),
            "stderr": float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
            "n": int(len(vals)),
        }
    else:  # n0check
        rep = n0_correction_check(cfg)
        payload = {
            "measured": rep.measured,
            "measured_stderr": rep.measured_stderr,
            "corrected_pred": rep.corrected_pred,
            "uncorrected_pred": rep.uncorrected_pred,
            "err_corrected": rep.err_corrected,
            "err_uncorrected": rep.err_uncorrected,
        }
    with _open_out(args) as out:
        _emit_json(out, f"mc {args.task}", config, payload)
    return 0


def _read_series(path: str, l_col: str, j_col: str) -> dict:
    series = {}
    with open(path) as f:
        header = None
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(",")
            if header is None:
                header = cells
                continue
            row = dict(zip(header, cells))
            series[int(float(row[l_col]))] = float(row[j_col])
    if not series:
        raise ValueError(f"no data rows found in {path}")
    return series


def _cmd_fit(args) -> int:
    series = _read_series(args.series, args.l_col, args.j_col)
    fit = (fit_power_law if args.kind == "power" else fit_exponential)(
        series, args.l_min
    )
    config = dict(series=args.series, kind=args.kind, l_min=args.l_min)
    payload = {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "stderr_slope": fit.stderr_slope,
        "window": list(fit.window),
        "r_squared": fit.r_squared,
    }
    if args.kind == "power":
        payload["zeta"] = -fit.slope
    else:
        payload["xi"] = fit.xi
        payload["phase"] = fit.phase
    with _open_out(args) as out:
        _emit_json(out, "fit", config, payload)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="jacprop",
        description="Partial-Jacobian criticality: infinite-width theory and "
                    "finite-width Monte-Carlo checks.",
    )
    p.add_argument("--config", help="JSON file whose entries override flags")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, mc=False):
        sp.add_argument("--act", required=True,
                        help="relu | erf | gelu | scale-invariant:a+:a-")
        sp.add_argument("--mode", default="vanilla",
                        help="vanilla | pre-ln | post-ln")
        sp.add_argument("--out", "-o", help="output path (default stdout)")
        if mc:
            sp.add_argument("--sw", type=float, required=True)
            sp.add_argument("--sb", type=float, required=True)

    t = sub.add_parser("theory-trace", help="layer-by-layer recursion table")
    add_common(t, mc=True)
    t.add_argument("--depth", type=int, required=True)
    t.add_argument("--k0", type=float, default=1.0, help="first-layer kernel")
    t.add_argument("--l0", type=int, default=0)
    t.add_argument("--ntk-lag", action="store_true",
                   help="use the lagged-kernel NTK recursion variant")
    t.set_defaults(fn=_cmd_theory_trace)

    c = sub.add_parser("critical", help="critical lines and points")
    add_common(c)
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--line", action="store_true")
    g.add_argument("--point", action="store_true")
    c.add_argument("--sw-min", type=float, default=0.5)
    c.add_argument("--sw-max", type=float, default=3.0)
    c.add_argument("--sw-steps", type=int, default=26)
    c.add_argument("--tol", type=float, default=1e-10)
    c.set_defaults(fn=_cmd_critical)

    d = sub.add_parser("phase-diagram", help="chi* on a sigma^2 grid")
    add_common(d)
    d.add_argument("--sw2-min", type=float, default=0.1)
    d.add_argument("--sw2-max", type=float, default=9.0)
    d.add_argument("--sb2-min", type=float, default=0.0)
    d.add_argument("--sb2-max", type=float, default=4.0)
    d.add_argument("--resolution", type=int, default=20)
    d.set_defaults(fn=_cmd_phase_diagram)

    m = sub.add_parser("mc", help="finite-width Monte-Carlo measurements")
    m.add_argument("task", choices=["chi", "profile", "ntk", "n0check"])
    add_common(m, mc=True)
    m.add_argument("--width", type=int, required=True)
    m.add_argument("--input-dim", type=int, required=True)
    m.add_argument("--depth", type=int, required=True)
    m.add_argument("--n-init", type=int, default=25)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--groups", type=int, default=1)
    m.add_argument("--input-mean", type=float, default=0.0)
    m.add_argument("--input-std", type=float, default=1.0)
    m.add_argument("--input-file",
                   help="raw little-endian float32 vector of length input-dim")
    m.add_argument("--resample-inputs", action="store_true",
                   help="draw a fresh input per ensemble member")
    m.add_argument("--l0", type=int, default=0)
    m.add_argument("--series-out", help="CSV path for the profile series")
    m.set_defaults(fn=_cmd_mc)

    f = sub.add_parser("fit", help="power-law / exponential fit of a series")
    f.add_argument("--series", required=True, help="CSV with layer and J columns")
    f.add_argument("--kind", choices=["power", "exp"], default="power")
    f.add_argument("--l-min", type=int, default=100)
    f.add_argument("--l-col", default="l")
    f.add_argument("--j-col", default="J_mean")
    f.add_argument("--out", "-o")
    f.set_defaults(fn=_cmd_fit)
    return p


def _apply_config_file(args) -> None:
    if not getattr(args, "config", None):
        return
    with open(args.config) as f:
        overrides = json.load(f)
    for key, value in overrides.items():
        setattr(args, key.replace("-", "_"), value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.fn(args)
    except argparse.ArgumentTypeError as exc:  # bad flag vocabulary
        print(f"jacprop: error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failure -> exit 1
        print(f"jacprop: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
