"""Config parsing, sweep drivers, n_s optimization and CSV/JSON output."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import yaml

from . import __version__
from .chain import ChainConfig, NumericalInvariantError, end_to_end
from .devices import DetectorSpec, SourceSpec, detector_povm, fiber_transmissivity, source_state
from .fock_core import TruncationError, TruncationPolicy
from .rates import COLUMNS, RateRow, direct_bps, error_row, make_row, tgw_bps, tgw_per_mode

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NoOptimumError(RuntimeError):
    """The key rate is zero across the whole bracket."""


# ----------------------------------------------------------------------------
# config

# key -> (type, default); a default of None marks the key mandatory
CONFIG_KEYS = {
    "total_distance_km": (float, 100.0),
    "num_links": (int, 1),
    "alpha_db_per_km": (float, None),
    "source_model": (str, "spdc_truncated"),
    "ns": (float, 0.035),
    "pair_terms_max": (int, 2),
    "freq_modes": (int, 1),
    "spatial_modes": (int, 1),
    "detector_efficiency": (float, 1.0),
    "dark_rate_hz": (float, 0.0),
    "rep_rate_hz": (float, 3.0e7),
    "memory_efficiency": (float, 1.0),
    "end_memory": (bool, True),
    "center_detector_kind": (str, "pnr"),
    "povm_model": (str, "exact"),
    "fock_cutoff": (int, 4),
    "global_photon_bound": (int, 8),
    "swap_order": (str, "sequential"),
}

_CHOICES = {
    "source_model": ("spdc_truncated", "pdc_exact", "perfect_pair"),
    "center_detector_kind": ("pnr", "spd"),
    "povm_model": ("exact", "paper"),
    "swap_order": ("sequential", "tree"),
}

_RANGES = {
    "total_distance_km": lambda v: v >= 0,
    "num_links": lambda v: v >= 1,
    "alpha_db_per_km": lambda v: v >= 0,
    "ns": lambda v: v >= 0,
    "pair_terms_max": lambda v: v >= 1,
    "freq_modes": lambda v: v >= 1,
    "spatial_modes": lambda v: v >= 1,
    "detector_efficiency": lambda v: 0 <= v <= 1,
    "dark_rate_hz": lambda v: v >= 0,
    "rep_rate_hz": lambda v: v > 0,
    "memory_efficiency": lambda v: 0 <= v <= 1,
    "fock_cutoff": lambda v: v >= 2,
    "global_photon_bound": lambda v: v >= 2,
}


def _coerce(key: str, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a sign ("3.0e7") as strings
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def resolve_config(raw: dict) -> dict:
    """Validate a flat mapping and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("<document>", "expected a flat key: value mapping")
    for key in raw:
        if key not in CONFIG_KEYS:
            raise ConfigError(str(key), "unknown key")
    out = {}
    for key, (kind, default) in CONFIG_KEYS.items():
        if key not in raw:
            if default is None:
                raise ConfigError(key, "missing mandatory key")
            out[key] = default
            continue
        value = _coerce(key, raw[key], kind)
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ConfigError(key, f"must be one of {', '.join(_CHOICES[key])}")
        if key in _RANGES and not _RANGES[key](value):
            raise ConfigError(key, f"value {value!r} out of range")
        out[key] = value
    if out["swap_order"] == "tree" and out["num_links"] & (out["num_links"] - 1):
        raise ConfigError("swap_order", "tree order requires num_links to be a power of two")
    if out["dark_rate_hz"] >= out["rep_rate_hz"]:
        raise ConfigError("dark_rate_hz", "dark-click probability per window must be < 1")
    if out["global_photon_bound"] < out["fock_cutoff"]:
        raise ConfigError("global_photon_bound", "must be >= fock_cutoff")
    return out


def build_config(values: dict) -> ChainConfig:
    def detector(kind):
        return DetectorSpec(
            eta=values["detector_efficiency"],
            dark_rate_hz=values["dark_rate_hz"],
            rep_rate_hz=values["rep_rate_hz"],
            kind=kind,
            povm_model=values["povm_model"],
        )

    return ChainConfig(
        total_distance_km=values["total_distance_km"],
        num_links=values["num_links"],
        alpha_db_per_km=values["alpha_db_per_km"],
        source=SourceSpec(values["source_model"], values["ns"], values["pair_terms_max"]),
        center_detectors=detector(values["center_detector_kind"]),
        node_detectors=detector("pnr"),
        endpoint_detectors=detector("pnr"),
        memory_efficiency=values["memory_efficiency"],
        end_memory=values["end_memory"],
        freq_modes=values["freq_modes"],
        spatial_modes=values["spatial_modes"],
        rep_rate_hz=values["rep_rate_hz"],
        swap_order=values["swap_order"],
        truncation=TruncationPolicy(values["fock_cutoff"], values["global_photon_bound"]),
    )


def parse_config(text: str) -> ChainConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"not valid YAML ({exc})") from exc
    return build_config(resolve_config({} if raw is None else raw))


def config_to_dict(cfg: ChainConfig) -> dict:
    det = cfg.center_detectors
    return {
        "total_distance_km": cfg.total_distance_km,
        "num_links": cfg.num_links,
        "alpha_db_per_km": cfg.alpha_db_per_km,
        "source_model": cfg.source.model,
        "ns": cfg.source.n_s,
        "pair_terms_max": cfg.source.pair_terms_max,
        "freq_modes": cfg.freq_modes,
        "spatial_modes": cfg.spatial_modes,
        "detector_efficiency": det.eta,
        "dark_rate_hz": det.dark_rate_hz,
        "rep_rate_hz": cfg.rep_rate_hz,
        "memory_efficiency": cfg.memory_efficiency,
        "end_memory": cfg.end_memory,
        "center_detector_kind": det.kind,
        "povm_model": det.povm_model,
        "fock_cutoff": cfg.truncation.per_mode_cutoff,
        "global_photon_bound": cfg.truncation.global_photon_bound,
        "swap_order": cfg.swap_order,
    }


def emit_config(cfg: ChainConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# ----------------------------------------------------------------------------
# drivers


@dataclass(frozen=True)
class SweepSpec:
    distances_km: tuple
    link_counts: tuple
    config: ChainConfig

    def __post_init__(self):
        if not self.distances_km or not self.link_counts:
            raise ValueError("sweep grids must be non-empty")
        if any(d <= 0 for d in self.distances_km):
            raise ValueError("sweep distances must be > 0")
        if any(n < 1 for n in self.link_counts):
            raise ValueError("link counts must be >= 1")

    def points(self) -> list[tuple[float, int]]:
        distances = sorted({round(float(d), 9) for d in self.distances_km})
        links = sorted({int(n) for n in self.link_counts})
        return [(d, n) for d in distances for n in links]


@dataclass
class OutputTable:
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (r.distance_km, r.n_links))


def parse_grid(text: str) -> tuple:
    """'A:B:STEP' inclusive of B, or a single number."""
    try:
        parts = [float(x) for x in text.split(":")]
    except ValueError as exc:
        raise ConfigError("--distances", f"cannot parse {text!r}") from exc
    if len(parts) == 1:
        return (parts[0],)
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise ConfigError("--distances", "expected A:B:STEP with STEP > 0 and B >= A")
    a, b, step = parts
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return tuple(round(a + i * step, 9) for i in range(count))


def evaluate_point(cfg: ChainConfig) -> tuple[RateRow, float]:
    """One grid point and its truncation loss; failures become error rows."""
    try:
        e2e = end_to_end(cfg)
        return make_row(cfg, e2e), e2e.dropped_weight
    except NumericalInvariantError as exc:
        return error_row(cfg, f"numerical: {exc}"), 0.0
    except (TruncationError, ValueError) as exc:
        return error_row(cfg, f"{type(exc).__name__}: {exc}"), 0.0


def evaluate(cfg: ChainConfig) -> RateRow:
    return evaluate_point(cfg)[0]


def _point_config(cfg: ChainConfig, distance: float, n_links: int) -> ChainConfig:
    order = cfg.swap_order
    if order == "tree" and n_links & (n_links - 1):
        order = "sequential"
    return replace(cfg, total_distance_km=distance, num_links=n_links, swap_order=order)


def run_sweep(spec: SweepSpec, workers: int = 1) -> OutputTable:
    configs = [_point_config(spec.config, d, n) for d, n in spec.points()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate_point, configs))
    else:
        results = [evaluate_point(c) for c in configs]
    meta = base_metadata(spec.config)
    meta["truncation_dropped_weight_max"] = max(d for _, d in results)
    return OutputTable([r for r, _ in results], meta)


def envelope(table: OutputTable) -> OutputTable:
    """Best row per distance; the winning n_links is the row's own n_links."""
    best: dict = {}
    for row in table.rows:
        if row.error is not None:
            continue
        cur = best.get(row.distance_km)
        if cur is None or row.key_rate_bps > cur.key_rate_bps:
            best[row.distance_km] = row
    meta = dict(table.metadata)
    meta["envelope"] = True
    return OutputTable(list(best.values()), meta)


_GOLD = (math.sqrt(5) - 1) / 2


def golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-4, scan: int = 9):
    """Maximize f on [lo, hi]: coarse scan to locate the peak, then golden section around it.

    The scan keeps a clamped-to-zero region from stalling the section search;
    the bracket edges are always candidates, so a monotone f returns an edge.
    """
    xs = [lo + (hi - lo) * k / (scan - 1) for k in range(scan)]
    vals = [f(x) for x in xs]
    k = max(range(scan), key=lambda i: (vals[i], -i))
    cache = dict(zip(xs, vals))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, scan - 1)]
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
        cache[c], cache[d] = fc, fd
    x_best = max(cache, key=lambda x: (cache[x], -x))
    return x_best, cache[x_best]


def optimize_ns(
    cfg: ChainConfig,
    distance_km: float,
    n_links: int,
    bracket: tuple = (0.001, 0.2),
    tol: float = 1e-4,
    rate_fn: Callable[[float], float] | None = None,
) -> tuple[float, float]:
    lo, hi = bracket
    if not 0 < lo < hi < 1:
        raise ValueError("bracket must lie inside (0, 1) with lo < hi")
    if rate_fn is None:
        base = _point_config(cfg, distance_km, n_links)

        def rate_fn(n_s):
            row = evaluate(replace(base, source=replace(base.source, n_s=n_s)))
            return 0.0 if row.error is not None else row.key_rate_bps

    x, v = golden_max(rate_fn, lo, hi, tol)
    if v <= 0:
        raise NoOptimumError("key rate is zero across the bracket")
    return x, v


# ----------------------------------------------------------------------------
# output


def base_metadata(cfg: ChainConfig) -> dict:
    return {
        "engine_version": __version__,
        "config": config_to_dict(cfg),
        "units": {"rates": "bits per second", "distance": "km"},
        "direct_bps": "BB84-style point-to-point baseline (not an optimal repeaterless protocol)",
    }


def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return str(x)
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def _json_value(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def finalize_metadata(table: OutputTable, reproducible: bool) -> dict:
    meta = dict(table.metadata)
    errors = [f"{r.distance_km}/{r.n_links}: {r.error}" for r in table.rows if r.error]
    meta["row_errors"] = errors
    if not reproducible:
        meta["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return meta


def to_csv(table: OutputTable, reproducible: bool = False) -> str:
    meta = finalize_metadata(table, reproducible)
    buf = io.StringIO()
    for key in sorted(meta):
        buf.write(f"# {key}: {json.dumps(meta[key], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in table.rows:
        d = row.as_dict()
        writer.writerow([_fmt(d[c]) for c in COLUMNS])
    return buf.getvalue()


def to_json(table: OutputTable, reproducible: bool = False) -> str:
    meta = finalize_metadata(table, reproducible)
    rows = [{k: _json_value(v) for k, v in r.as_dict().items()} for r in table.rows]
    return json.dumps({"metadata": meta, "rows": rows}, indent=2, sort_keys=True) + "\n"


def bounds_table(distances: Sequence[float], cfg: ChainConfig) -> list[dict]:
    out = []
    for d in sorted(set(distances)):
        eta = fiber_transmissivity(d, cfg.alpha_db_per_km)
        out.append(
            {
                "distance_km": d,
                "eta": eta,
                "tgw_per_mode": tgw_per_mode(eta),
                "tgw_bps": tgw_bps(d, cfg.alpha_db_per_km, cfg.rep_rate_hz, cfg.modes),
                "direct_bps": direct_bps(d, cfg),
            }
        )
    return out


# ----------------------------------------------------------------------------
# oracle cross-check


def verify_with_oracle(cfg: ChainConfig, e2e) -> dict:
    """Run the dense reference chain and report deviations from the engine."""
    from . import oracle

    pairs = {"spdc_truncated": 2, "perfect_pair": 1}.get(cfg.source.model, cfg.source.pair_terms_max)
    if pairs > 2:
        return {"skipped": "dense reference limited to two pair terms"}
    cutoff = cfg.truncation.per_mode_cutoff
    state, _ = source_state(cfg.source)
    center = detector_povm(cfg.center_detectors, cutoff).matrix()
    node = detector_povm(cfg.node_detectors, cutoff).matrix()
    end = detector_povm(cfg.endpoint_detectors, cutoff).matrix()
    if cfg.center_detectors.kind == "spd":
        center = center[:2]
    eta_half = fiber_transmissivity(cfg.link_length_km / 2, cfg.alpha_db_per_km)
    ref = oracle.dense_chain(
        state.amplitudes, eta_half, center, node, end, cfg.memory_efficiency,
        cfg.num_links, cfg.end_memory, cutoff, pairs,
    )
    dev = {"p_s0": abs(ref["p_s0"] - e2e.p_s0)}
    for a, b in zip(ref["p_swap"], e2e.p_swap):
        dev["p_swap"] = max(dev.get("p_swap", 0.0), abs(a - b))
    if "final_state" in ref and e2e.q_z is not None:
        dev["p_ab"] = abs(ref["p_ab"] - e2e.p_ab)
        dev["q_z"] = abs(ref["q_z"] - e2e.q_z)
        dev["q_x"] = abs(ref["q_x"] - e2e.q_x)
        dev["final_state_trace_distance"] = oracle.trace_distance(
            oracle.dense_from_ensemble(e2e.final_state), ref["final_state"]
        )
    return {"max_deviation": max(dev.values()), "deviations": dev}


# ----------------------------------------------------------------------------
# command line


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--reproducible", action="store_true", help="omit the timestamp from metadata")
    common.add_argument("--workers", type=int, default=1, help="processes for grid evaluation")

    p = _Parser(prog="pdc-repeater", description="Multiplexed PDC repeater-chain simulator", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="one configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--verify-oracle", action="store_true")

    s = sub.add_parser("sweep", parents=[common], help="distance x link-count grid")
    s.add_argument("--config", required=True)
    s.add_argument("--distances", required=True)
    s.add_argument("--links", required=True)
    s.add_argument("--envelope", action="store_true", help="keep only the best N per distance")

    s = sub.add_parser("optimize-ns", parents=[common], help="maximize the key rate over n_s")
    s.add_argument("--config", required=True)
    s.add_argument("--distance", type=float, required=True)
    s.add_argument("--links", type=int, required=True)
    s.add_argument("--bracket", default="0.001:0.2")

    s = sub.add_parser("bounds", parents=[common], help="TGW bound and direct baseline")
    s.add_argument("--distances", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--alpha", type=float, default=None, help="dB/km; needed when --config is absent")
    return p


def _read_config(path: str) -> ChainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from exc
    return parse_config(text)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _render(table: OutputTable, args) -> str:
    return (to_json if args.format == "json" else to_csv)(table, args.reproducible)


def _render_records(records: list[dict], meta: dict, args) -> str:
    if not args.reproducible:
        meta = dict(meta, timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    if args.format == "json":
        clean = [{k: _json_value(v) for k, v in r.items()} for r in records]
        return json.dumps({"metadata": meta, "rows": clean}, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    for key in sorted(meta):
        buf.write(f"# {key}: {json.dumps(meta[key], sort_keys=True)}\n")
    if records:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(records[0]))
        for r in records:
            writer.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _read_config(args.config)
            e2e = end_to_end(cfg)
            table = OutputTable([make_row(cfg, e2e)], base_metadata(cfg))
            table.metadata["truncation_dropped_weight"] = e2e.dropped_weight
            if args.verify_oracle:
                report = verify_with_oracle(cfg, e2e)
                table.metadata["oracle"] = report
                print(f"oracle: {json.dumps(report, sort_keys=True)}", file=sys.stderr)
            _emit(_render(table, args), args.out)
            return EXIT_OK

        if args.command == "sweep":
            cfg = _read_config(args.config)
            try:
                links = tuple(int(x) for x in args.links.split(","))
                spec = SweepSpec(parse_grid(args.distances), links, cfg)
            except ValueError as exc:
                raise ConfigError("--links/--distances", str(exc)) from exc
            table = run_sweep(spec, workers=args.workers)
            if args.envelope:
                table = envelope(table)
            _emit(_render(table, args), args.out)
            if any(r.error and r.error.startswith("numerical") for r in table.rows):
                return EXIT_NUMERICAL
            return EXIT_OK

        if args.command == "optimize-ns":
            cfg = _read_config(args.config)
            bracket = tuple(float(x) for x in args.bracket.split(":"))
            try:
                n_s, rate = optimize_ns(cfg, args.distance, args.links, bracket)
                record = {"distance_km": args.distance, "n_links": args.links, "n_s_star": n_s, "rate_star_bps": rate}
            except NoOptimumError as exc:
                record = {"distance_km": args.distance, "n_links": args.links, "n_s_star": None, "rate_star_bps": 0.0}
                print(f"no optimum: {exc}", file=sys.stderr)
            _emit(_render_records([record], base_metadata(cfg), args), args.out)
            return EXIT_OK

        if args.command == "bounds":
            if args.config is not None:
                cfg = _read_config(args.config)
            elif args.alpha is not None:
                cfg = build_config(resolve_config({"alpha_db_per_km": args.alpha}))
            else:
                raise ConfigError("alpha_db_per_km", "bounds needs --config or --alpha")
            records = bounds_table(parse_grid(args.distances), cfg)
            _emit(_render_records(records, base_metadata(cfg), args), args.out)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInvariantError as exc:
        print(f"numerical invariant violated: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
