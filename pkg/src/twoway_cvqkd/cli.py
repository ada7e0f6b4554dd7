"""Command-line front end: ``cvqkd keyrate | sweep | tolerable-noise | max-distance | emulate``.

Scenario values come from flags, then from an INI config file section
(``--config FILE --section NAME``), then from built-in defaults. Exit codes:
0 success, 2 invalid input, 3 numerical or physicality failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
from dataclasses import dataclass

from .analysis import (
    AXES,
    QUANTITIES,
    Settings,
    SweepSpec,
    format_float,
    iter_sweep,
    max_distance,
    tolerable_epsilon,
    write_sweep_csv,
)
from .errors import DomainError, FactorizationError, InsufficientDataError, PhysicalityError
from .protocols import VARIANTS, build_het2m_closed_form, key_rate
from .sampler import MIN_SHOTS, key_rate_from_samples, sample_shots

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

_VARIANT_NAMES = {v.lower(): v for v in VARIANTS}

# keys accepted in a config section; each matches the argparse dest of its flag
_KEYS = (
    "variant", "variants", "V", "VA", "TA", "beta", "eps", "eps2", "dist", "dist2", "T", "T2",
    "loss", "k_policy", "method", "axis", "grid", "quantity", "asymmetric", "seed", "n_shots",
    "bootstrap", "out", "csv", "shots_out", "cm_out", "workers",
)

_DEFAULTS = {
    "variant": "Het2M",
    "VA": "1",
    "TA": "0.5",
    "beta": "1",
    "eps": "0",
    "loss": "0.2",
    "k_policy": "transmittance",
    "method": "generic",
    "quantity": "K_R",
    "asymmetric": "false",
    "n_shots": "100000",
    "bootstrap": "200",
    "workers": "1",
}


class UsageError(DomainError):
    pass


def parse_variant(name: str) -> str:
    try:
        return _VARIANT_NAMES[name.strip().lower()]
    except KeyError:
        raise UsageError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}") from None


def parse_grid(text: str) -> list[float]:
    """``"a,b,c"`` lists values; ``"start:stop:step"`` is an inclusive range; ``""`` is empty."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid range must be start:stop:step, got {text!r}")
        start, stop, step = (_number("grid", p) for p in parts)
        if step <= 0:
            raise UsageError(f"grid step must be > 0, got {step}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(max(count, 0))]
    return [_number("grid", p) for p in text.split(",")]


def _number(name: str, text) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise UsageError(f"{name} must be a number, got {text!r}") from None
    if math.isnan(value):
        raise UsageError(f"{name} must not be NaN")
    return value


def _integer(name: str, text) -> int:
    try:
        return int(str(text), 0)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {text!r}") from None


def _flag(name: str, text) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{name} must be true or false, got {text!r}")


@dataclass
class RunConfig:
    """Fully resolved and validated inputs of one CLI invocation."""

    subcommand: str
    variants: tuple[str, ...]
    settings: Settings
    axis: str | None = None
    grid: tuple[float, ...] = ()
    quantity: str = "K_R"
    symmetric: bool = True
    seed: int = 0
    n_shots: int = 100000
    bootstrap: int = 200
    workers: int = 1
    out: str | None = None
    csv: str | None = None
    shots_out: str | None = None
    cm_out: str | None = None


def _merged(args: argparse.Namespace) -> dict[str, str]:
    values = dict(_DEFAULTS)
    env_seed = os.environ.get("CVQKD_SEED")
    if env_seed is not None and env_seed.strip():
        values["seed"] = env_seed.strip()
    if args.config:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(args.config) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config file {args.config!r}: {exc}") from None
        sections = parser.sections()
        section = args.section or (sections[0] if len(sections) == 1 else None)
        if section is None:
            raise UsageError(f"config file has sections {sections}; choose one with --section")
        if not parser.has_section(section):
            raise UsageError(f"config file has no section [{section}]")
        for key, value in parser.items(section):
            if key not in _KEYS:
                raise UsageError(f"unknown config key {key!r} in section [{section}]")
            values[key] = value
    for key in _KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge flags, config file and defaults, and validate every field."""
    v = _merged(args)
    if "V" not in v:
        raise UsageError("V (Bob's EPR variance, V >= 1) is required")
    if "variants" in v and args.command == "sweep":
        variants = tuple(parse_variant(x) for x in str(v["variants"]).split(",") if x.strip())
    else:
        variants = (parse_variant(v["variant"]),)
    VA = v["VA"]
    VA = "tied" if str(VA).strip().lower() == "tied" else _number("VA", VA)
    opt = {}
    for key, name in (("eps2", "eps2"), ("dist2", "distance2_km"), ("T", "T"), ("T2", "T2")):
        if key in v:
            opt[name] = _number(key, v[key])
    policy = str(v["k_policy"]).strip()
    k_policy = policy if policy in ("transmittance", "wiener") else _number("k_policy", policy)
    settings = Settings(
        V=_number("V", v["V"]),
        V_A=VA,
        T_A=_number("TA", v["TA"]),
        beta=_number("beta", v["beta"]),
        eps=_number("eps", v["eps"]),
        distance_km=_number("dist", v.get("dist", 0)),
        loss_db_per_km=_number("loss", v["loss"]),
        k_policy=k_policy,
        method=str(v["method"]),
        **opt,
    )
    for variant in variants:
        settings.scenario(variant)  # raises DomainError naming the bad field
    cfg = RunConfig(
        subcommand=args.command,
        variants=variants,
        settings=settings,
        quantity=str(v["quantity"]),
        symmetric=not _flag("asymmetric", v["asymmetric"]),
        seed=_integer("seed", v.get("seed", 0)),
        n_shots=_integer("n_shots", v["n_shots"]),
        bootstrap=_integer("bootstrap", v["bootstrap"]),
        workers=_integer("workers", v["workers"]),
        out=v.get("out"),
        csv=v.get("csv"),
        shots_out=v.get("shots_out"),
        cm_out=v.get("cm_out"),
    )
    if cfg.subcommand == "sweep":
        if "axis" not in v or "grid" not in v:
            raise UsageError("sweep needs --axis and --grid")
        cfg.axis = str(v["axis"])
        if cfg.axis not in AXES:
            raise UsageError(f"axis must be one of {', '.join(AXES)}, got {cfg.axis!r}")
        if cfg.quantity not in QUANTITIES:
            raise UsageError(f"quantity must be one of {', '.join(QUANTITIES)}, got {cfg.quantity!r}")
        cfg.grid = tuple(parse_grid(str(v["grid"])))
        SweepSpec(cfg.variants, cfg.axis, cfg.grid, settings, cfg.quantity, cfg.symmetric)
    if cfg.subcommand == "emulate":
        if cfg.n_shots < MIN_SHOTS:
            raise InsufficientDataError(f"n_shots must be >= {MIN_SHOTS} to estimate the covariance matrix, got {cfg.n_shots}")
        if not 0 <= cfg.seed < 2**128:
            raise UsageError(f"seed must lie in [0, 2**128), got {cfg.seed}")
        if cfg.bootstrap < 2:
            raise UsageError(f"bootstrap must be >= 2, got {cfg.bootstrap}")
        if not settings.scenario(variants[0]).two_way:
            raise UsageError("emulate supports the two-way variants only")
    if cfg.workers < 1:
        raise UsageError(f"workers must be >= 1, got {cfg.workers}")
    return cfg


def _aligned(rows: list[tuple[str, str]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {val}" for k, val in rows) + "\n"


def _report_rows(d: dict) -> list[tuple[str, str]]:
    rows = []
    for key, value in d.items():
        if isinstance(value, list):
            rows += [(f"{key}[{i}]", format_float(x)) for i, x in enumerate(value)]
        elif isinstance(value, (bool, str)):
            rows.append((key, str(value)))
        elif isinstance(value, int):
            rows.append((key, str(value)))
        else:
            rows.append((key, format_float(value)))
    return rows


def _key_value_csv(rows: list[tuple[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    w.writerows(rows)
    return buf.getvalue()


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_keyrate(cfg: RunConfig, out) -> int:
    s = cfg.settings.scenario(cfg.variants[0])
    rows = _report_rows(key_rate(s, method=cfg.settings.method).as_dict())
    out.write(_aligned(rows))
    if cfg.csv:
        _write(cfg.csv, _key_value_csv(rows))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out) -> int:
    spec = SweepSpec(cfg.variants, cfg.axis, cfg.grid, cfg.settings, cfg.quantity, cfg.symmetric)
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            write_sweep_csv(iter_sweep(spec, cfg.workers), fh, cfg.quantity)
    else:
        write_sweep_csv(iter_sweep(spec, cfg.workers), out, cfg.quantity)
    return EXIT_OK


def _cmd_root(cfg: RunConfig, out, finder, name: str) -> int:
    rows = []
    for variant in cfg.variants:
        r = finder(variant, cfg.settings)
        rows += [
            (f"{variant}.{name}", format_float(r.value)),
            (f"{variant}.status", r.status),
            (f"{variant}.bracket_low", format_float(r.bracket[0])),
            (f"{variant}.bracket_high", format_float(r.bracket[1])),
            (f"{variant}.residual", format_float(r.residual)),
        ]
    out.write(_aligned(rows))
    if cfg.csv:
        _write(cfg.csv, _key_value_csv(rows))
    return EXIT_OK


def cmd_tolerable_noise(cfg: RunConfig, out) -> int:
    return _cmd_root(cfg, out, tolerable_epsilon, "eps_star")


def cmd_max_distance(cfg: RunConfig, out) -> int:
    return _cmd_root(cfg, out, max_distance, "d_star")


def cmd_emulate(cfg: RunConfig, out) -> int:
    s = cfg.settings.scenario(cfg.variants[0])
    shots = sample_shots(build_het2m_closed_form(s), cfg.n_shots, cfg.seed)
    result = key_rate_from_samples(shots, s, n_boot=cfg.bootstrap, method=cfg.settings.method)
    d = result.as_dict()
    d["K_R_analytic"] = key_rate(s, method=cfg.settings.method).K_R
    rows = _report_rows(d)
    if cfg.shots_out:
        _write(cfg.shots_out, shots.to_csv())
    if cfg.cm_out:
        _write(cfg.cm_out, result.estimate.to_csv())
    if cfg.csv:
        _write(cfg.csv, _key_value_csv(rows))
    out.write(_aligned(rows))
    return EXIT_OK


COMMANDS = {
    "keyrate": cmd_keyrate,
    "sweep": cmd_sweep,
    "tolerable-noise": cmd_tolerable_noise,
    "max-distance": cmd_max_distance,
    "emulate": cmd_emulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with one section per scenario")
    common.add_argument("--section", help="config section to use (default: the only one)")
    common.add_argument("--variant", help=f"protocol variant, case-insensitive ({', '.join(VARIANTS)})")
    common.add_argument("--V", help="Bob's EPR variance (>= 1, shot-noise units)")
    common.add_argument("--VA", help="Alice's EPR variance (>= 1) or 'tied' for V/(1-T_A)")
    common.add_argument("--TA", help="Alice's beam-splitter transmittance, in (0, 1)")
    common.add_argument("--beta", help="reconciliation efficiency, in [0, 1]")
    common.add_argument("--eps", help="excess noise of each channel leg")
    common.add_argument("--eps2", help="excess noise of the backward leg if different")
    common.add_argument("--dist", help="fiber length per leg in km")
    common.add_argument("--dist2", help="fiber length of the backward leg if different")
    common.add_argument("--T", help="transmittance per leg (overrides --dist)")
    common.add_argument("--T2", help="transmittance of the backward leg (overrides --dist2)")
    common.add_argument("--loss", help="fiber loss in dB/km (default 0.2)")
    common.add_argument("--k-policy", dest="k_policy", help="transmittance, wiener or a fixed number")
    common.add_argument("--method", help="symplectic spectrum method: generic or quartic")
    common.add_argument("--csv", help="also write the report as key,value CSV")

    parser = argparse.ArgumentParser(prog="cvqkd", description="Key rates of two-way CV-QKD protocols.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("keyrate", parents=[common], help="key rate at one scenario")
    sw = sub.add_parser("sweep", parents=[common], help="key rate or roots along a parameter axis")
    sw.add_argument("--variants", help="comma-separated variants (overrides --variant)")
    sw.add_argument("--axis", help=f"swept field: {', '.join(AXES)}")
    sw.add_argument("--grid", help="'a,b,c' or inclusive 'start:stop:step'; '' for none")
    sw.add_argument("--quantity", help=f"{', '.join(QUANTITIES)}")
    sw.add_argument("--asymmetric", action="store_const", const="true", help="sweep the forward leg only")
    sw.add_argument("--workers", help="worker processes (output is identical)")
    sw.add_argument("--out", help="CSV output path (default stdout)")
    sub.add_parser("tolerable-noise", parents=[common], help="largest excess noise with K_R >= 0")
    sub.add_parser("max-distance", parents=[common], help="fiber length per leg where K_R reaches 0")
    em = sub.add_parser("emulate", parents=[common], help="shot-level estimation of the key rate")
    em.add_argument("--n-shots", dest="n_shots", help="number of shots (>= 100)")
    em.add_argument("--seed", help="RNG seed (default: $CVQKD_SEED or 0)")
    em.add_argument("--bootstrap", help="bootstrap resamples (default 200)")
    em.add_argument("--shots-out", dest="shots_out", help="write the shot record CSV here")
    em.add_argument("--cm-out", dest="cm_out", help="write the estimated covariance matrix CSV here")
    return parser


def main(argv: list[str] | None = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[cfg.subcommand](cfg, out)
    except (PhysicalityError, FactorizationError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_NUMERICAL
    except ValueError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INVALID
    except ArithmeticError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_NUMERICAL
    except OSError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INVALID


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
