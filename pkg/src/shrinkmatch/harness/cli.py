"""Command-line entry point.

Exit status is 0 on success, 2 on usage or configuration errors and 1 when
a run fails.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from ..dictionary import DICTIONARIES, coherence, make_dictionary
from ..sensing import shrink_and_match, ssm
from ..signal_model import (ObservationSet, collect_full_obs, collect_spatial_obs, collect_temporal_obs,
                            draw_scenario, full_stream_length, read_observations, synthesize_rx,
                            write_observations)
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .experiments import run_experiment

log = logging.getLogger("shrinkmatch")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", default="desk", help="config file or preset name (desk, scaled, paper)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shrinkmatch", description="Covariance-based spatial/spectral sensing")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="synthesize observations to a binary file")
    _common(g)
    g.add_argument("--kind", choices=("full", "spatial", "temporal"), default="full")
    g.add_argument("-K", type=int, default=20)
    g.add_argument("--snr-db", type=float, default=10.0)
    g.add_argument("--scenario-out", help="write the drawn scenario as JSON")

    for name, helptext in (("sm", "shrink-and-match on one observation set"),
                           ("ssm", "separable spatial/temporal detection")):
        s = sub.add_parser(name, help=helptext)
        _common(s)
        s.add_argument("--obs", help="observation file (default: synthesize from the config)")
        s.add_argument("--noise-var", type=float, help="noise variance (default: from --snr-db)")
        s.add_argument("-K", type=int, default=20)
        s.add_argument("--snr-db", type=float, default=10.0)
        if name == "sm":
            s.add_argument("--dict", choices=("spatial", "temporal", "joint"), default="spatial")

    e = sub.add_parser("exp", help="run an experiment suite")
    e.add_argument("kind", choices=EXPERIMENTS)
    _common(e)

    d = sub.add_parser("dict", help="dictionary utilities")
    d.add_argument("action", choices=("info",))
    d.add_argument("--kind", choices=tuple(DICTIONARIES), default="spatial")
    d.add_argument("--config", default="desk")
    return parser


def _config(args, **extra) -> ExperimentConfig:
    cfg = load_config(args.config)
    try:
        return cfg.with_overrides(seed=getattr(args, "seed", None), trials=getattr(args, "trials", None),
                                  format=getattr(args, "format", None), threads=getattr(args, "threads", None),
                                  **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _synth(cfg: ExperimentConfig, K: int, snr_db: float):
    scenario = draw_scenario(cfg.dims, [cfg.seed, 0], cfg.scenario_spec(snr_db))
    stream = synthesize_rx(scenario, full_stream_length(cfg.dims, K), [cfg.seed, 1], cfg.constellation)
    return scenario, stream


def cmd_gen(args) -> int:
    cfg = _config(args)
    if not args.out:
        raise UsageError("gen needs --out")
    scenario, stream = _synth(cfg, args.K, args.snr_db)
    if args.kind == "full":
        obs = collect_full_obs(stream, cfg.dims, args.K)
    elif args.kind == "spatial":
        obs = collect_spatial_obs(stream, cfg.dims, args.K)
    else:
        obs = ObservationSet(collect_temporal_obs(stream, cfg.dims, args.K)[:, 0, :].T, "temporal")
    write_observations(args.out, obs)
    if args.scenario_out:
        with open(args.scenario_out, "w") as fh:
            json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
    log.info("wrote %s observations d=%d K=%d to %s", obs.kind, obs.d, obs.K, args.out)
    return EXIT_OK


def _noise_var(args) -> float:
    return args.noise_var if args.noise_var is not None else 10.0 ** (-args.snr_db / 10.0)


def cmd_sm(args) -> int:
    cfg = _config(args)
    dims = cfg.dims
    if args.obs:
        obs = read_observations(args.obs)
    else:
        _, stream = _synth(cfg, args.K, args.snr_db)
        obs = {"spatial": lambda: collect_spatial_obs(stream, dims, args.K),
               "temporal": lambda: ObservationSet(collect_temporal_obs(stream, dims, args.K)[:, 0, :].T, "temporal"),
               "joint": lambda: collect_full_obs(stream, dims, args.K)}[args.dict]()
    dictionary = make_dictionary(args.dict, dims)
    if obs.d != dictionary.side:
        raise ConfigError(f"{obs.kind} observations have d={obs.d}; the {args.dict} dictionary needs {dictionary.side}")
    params = cfg.sensing_params()
    omp = params.spatial_omp if args.dict == "spatial" else params.temporal_omp
    est, coeffs = shrink_and_match(obs, dictionary, _noise_var(args), params.shrink, omp, cfg.detect_threshold)
    rows = [(int(i), " ".join(map(str, dictionary.params(int(i)))), f"{v:.10g}")
            for i, v in zip(coeffs.support, coeffs.values)]
    if cfg.format == "json":
        text = json.dumps({"gamma": est.gamma, "trace": est.trace_estimate,
                           "atoms": [{"index": r[0], "params": r[1], "value": float(r[2])} for r in rows]},
                          indent=2) + "\n"
    else:
        text = _rows_csv(("index", "params", "value"), rows)
    _emit(text, args.out)
    return EXIT_OK


def _blocks_from_full(obs: ObservationSet, dims) -> np.ndarray:
    if obs.kind != "full":
        raise ConfigError("ssm needs a full observation file")
    obs.check_dims(dims)
    return obs.data.T.reshape(obs.K, dims.M, dims.N_R).transpose(0, 2, 1)


def cmd_ssm(args) -> int:
    from ..sensing import detect_aoas, detect_subcarriers, spatial_filter, SensingReport
    from ..dictionary import SpatialDictionary, TemporalDictionary

    cfg = _config(args)
    dims = cfg.dims
    params = replace(cfg.sensing_params(), threads=cfg.threads)
    var = _noise_var(args)
    if args.obs:
        blocks = _blocks_from_full(read_observations(args.obs), dims)
        # windows start 2M apart, so their first samples serve as array snapshots
        aoas, s_coeffs, _ = detect_aoas(blocks[:, :, 0].T, SpatialDictionary(dims), var, params)
        if aoas:
            _, pinv, rows = spatial_filter(aoas, dims)
            per_dir, union, t_coeffs, _ = detect_subcarriers(blocks, pinv, TemporalDictionary(dims), var, params, rows)
            report = SensingReport(aoas, per_dir, union, s_coeffs, t_coeffs)
        else:
            report = SensingReport.idle(s_coeffs)
    else:
        _, stream = _synth(cfg, args.K, args.snr_db)
        report = ssm(stream, dims, var, args.K, params)
    if cfg.format == "json":
        text = json.dumps(report.to_dict(), indent=2) + "\n"
    else:
        text = _rows_csv(("key", "value"), report.to_rows())
    _emit(text, args.out)
    return EXIT_OK


def cmd_exp(args) -> int:
    cfg = _config(args, experiment=args.kind)
    result = run_experiment(cfg)
    _emit(result.render(cfg.format), args.out)
    for e in result.errors:
        print(f"warning: {e}", file=sys.stderr)
    return EXIT_OK


def cmd_dict(args) -> int:
    cfg = load_config(args.config)
    d = make_dictionary(args.kind, cfg.dims)
    lines = [("kind", d.kind), ("D", d.size), ("atom_side", d.side),
             ("dense_bytes", d.memory_estimate()), ("coherence_sampled", f"{coherence(d, sample=100):.6f}")]
    sys.stdout.write("".join(f"{k} = {v}\n" for k, v in lines))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "sm": cmd_sm, "ssm": cmd_ssm, "exp": cmd_exp, "dict": cmd_dict}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
