"""Command-line front end: ``extrapattn <subcommand> [--config PATH] ...``.

Subcommands: analyze-spec, simulate, kernel-check, repetition, bench. JSON
configs are validated against a per-command key set; command-line flags
override config values. Structured reports are JSON, sweeps are CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attention_ref import DEFAULT_CAP, AttentionProblem, InterventionMask, attend_reference
from .attention_tiled import TileConfig, attend_tiled
from .decay import TEMPORAL_FRAME, TOKEN_INDEX, DecayPolicy, make_strategy
from .errors import ConfigError, ExtrapAttnError, InvalidInputError, NumericError, ResourceError, ShapeError
from .repetition import FrameSequence, norepeat_score
from .rope import GridShape, RopeSpec, make_rope_spec
from .spectrum import SpectralPattern, detect_period, empirical_row_pattern, harmonic_analysis, harmonic_positions
from .synth import PlantSpec, harmonic_spec, make_problem, plant_pattern
from .tensorio import ContainerError, write_bundle

log = logging.getLogger("extrapattn")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_TOLERANCE = 5
EXIT_RESOURCE = 6

FIXTURES = Path(__file__).parent / "fixtures"

_ROPE_KEYS = {"theta_t", "theta_h", "theta_w", "d_t", "d_h", "d_w", "freq_t", "freq_h", "freq_w", "path",
              "base_period", "ratios"}
_POLICY_KEYS = {"strategy", "alpha", "alpha1", "alpha2", "beta", "gamma", "period", "window", "position_mode",
                "first_frame_factor", "seq_len"}
SCHEMAS = {
    "analyze-spec": {"rope", "amps", "seq_len", "integer_tol", "phases"},
    "simulate": {"rope", "plant", "policy", "alphas", "proportions", "rank_by", "value_mode", "tiled", "tile",
                 "cap", "detect_eps"},
    "kernel-check": {"cases", "l_min", "l_max", "dims", "tiles", "tol", "fault"},
    "repetition": {"frames", "period", "threshold", "search_radius", "distance", "value_range", "tensor"},
    "bench": {"sizes", "tile", "d", "repeats", "cap", "policy", "check_error"},
}


# --------------------------------------------------------------------------- config


def load_config(path, command):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    validate_config(cfg, command, source=str(path))
    return cfg


def validate_config(cfg, command, source="config"):
    unknown = set(cfg) - SCHEMAS[command]
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) for {command}: {', '.join(sorted(unknown))}")
    for section, allowed in (("rope", _ROPE_KEYS), ("policy", _POLICY_KEYS)):
        if section in cfg and cfg[section] is not None:
            if not isinstance(cfg[section], dict):
                raise ConfigError(f"{source}: '{section}' must be an object")
            bad = set(cfg[section]) - allowed
            if bad:
                raise ConfigError(f"{source}: unknown key(s) in '{section}': {', '.join(sorted(bad))}")


def rope_from_config(rc) -> RopeSpec:
    rc = dict(rc or {})
    try:
        if "path" in rc:
            return RopeSpec.load(rc["path"])
        if "freq_t" in rc:
            return RopeSpec.from_dict({k: rc[k] for k in ("d_t", "d_h", "d_w", "freq_t", "freq_h", "freq_w") if k in rc})
        if "base_period" in rc:
            return harmonic_spec(float(rc["base_period"]), tuple(rc.get("ratios", (8, 4, 2, 1))), int(rc.get("d_h", 0)))
        return make_rope_spec(
            float(rc.get("theta_t", 256.0)),
            float(rc.get("theta_h", 10000.0)),
            float(rc.get("theta_w", 10000.0)),
            int(rc.get("d_t", 16)),
            int(rc.get("d_h", 0)),
            int(rc.get("d_w", 0)),
        )
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid rope section: {exc}") from exc


def policy_from_config(pc, grid: GridShape):
    if pc is None:
        return None
    pc = dict(pc)
    mode = pc.get("position_mode", TEMPORAL_FRAME)
    seq_len = pc.get("seq_len", grid.t_len if mode == TEMPORAL_FRAME else grid.n_tokens)
    try:
        strat = make_strategy(pc.get("strategy", "constant"), pc.get("alpha", 0.9), pc.get("alpha1"), pc.get("alpha2"))
        return DecayPolicy(
            strategy=strat,
            train_window=int(pc["window"]),
            seq_len=int(seq_len),
            beta=pc.get("beta"),
            gamma=int(pc.get("gamma", 0)),
            period=pc.get("period"),
            position_mode=mode,
            first_frame_factor=pc.get("first_frame_factor"),
        )
    except KeyError as exc:
        raise ConfigError(f"policy section missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid policy: {exc}") from exc


def policy_overrides(args):
    over = {}
    for flag, key in (("alpha", "alpha"), ("alpha1", "alpha1"), ("alpha2", "alpha2"), ("beta", "beta"),
                      ("gamma", "gamma"), ("period", "period"), ("window", "window"), ("strategy", "strategy"),
                      ("position_mode", "position_mode")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    return over


def emit(text, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in columns})
    return buf.getvalue()


def dtype_of(name):
    return {"f32": np.float32, "f64": np.float64}[name]


# --------------------------------------------------------------------------- commands


def cmd_analyze_spec(cfg, args):
    spec = rope_from_config(cfg.get("rope"))
    seq_len = int(args.seq_len or cfg.get("seq_len", 132))
    amps = cfg.get("amps") or [1.0] * len(spec.freq_t)
    if len(amps) != len(spec.freq_t):
        raise ConfigError(f"amps has {len(amps)} entries for {len(spec.freq_t)} temporal frequencies")
    pattern = SpectralPattern(spec.freq_t, amps, cfg.get("phases"), 0.0)
    report = harmonic_analysis(pattern, float(cfg.get("integer_tol", 0.06)))
    out = {
        "report": report.to_dict(),
        "seq_len": seq_len,
        "fundamental_positions": harmonic_positions(report, seq_len, period=report.fundamental_period),
        "risk_positions": harmonic_positions(report, seq_len),
        "rope": spec.to_dict(),
    }
    emit(dumps(out), args.out)
    return EXIT_OK


def _simulate_problem(cfg, args):
    spec = rope_from_config(cfg.get("rope") or {"base_period": 8, "ratios": [8, 4, 2, 1]})
    plant = cfg.get("plant") or {
        "target_amps": [0.5] * (spec.d_t // 2),
        "grid": {"t_len": 32, "h_len": 2, "w_len": 2},
        "spatial_constants": [0.0] * ((spec.d_h + spec.d_w) // 2),
        "noise_std": 0.1,
    }
    try:
        ps = PlantSpec.from_dict({**plant, "seed": plant.get("seed", args.seed)})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid plant section: {exc}") from exc
    Q, K = plant_pattern(ps, spec)
    prob = make_problem(Q, K, cfg.get("value_mode", "random"), ps.grid, ps.seed, spec)
    return spec, ps, prob


def cmd_simulate(cfg, args):
    spec, ps, prob = _simulate_problem(cfg, args)
    grid = ps.grid
    pc = dict(cfg.get("policy") or {"window": max(1, grid.t_len // 3)})
    pc.update(policy_overrides(args))
    dtype = dtype_of(args.dtype)
    tiled = bool(cfg.get("tiled", False) or args.tiled)
    cap = int(cfg.get("cap", DEFAULT_CAP))
    tcfg = TileConfig(*cfg.get("tile", (64, 64)))
    if not tiled and prob.n_tokens > cap:
        raise ResourceError(f"L'={prob.n_tokens} exceeds the reference cap {cap}; rerun with --tiled")

    dts, means = empirical_row_pattern(prob.Q, prob.K, grid)
    # noisy binned means: tolerance is a fraction of the signal's peak-to-peak range
    eps = float(cfg.get("detect_eps", 0.1)) * float(np.ptp(means))
    found = detect_period(means, horizon=float(grid.t_len - 1), step=1.0, eps=eps)
    detected = "" if found is None else f"{found:g}"

    rows = []
    alphas = cfg.get("alphas", [1.0, 0.95, 0.9, 0.8, 0.5])
    for a in alphas:
        pol = policy_from_config({**pc, "strategy": "constant", "alpha": a}, grid)
        rows.append(_sim_row("alpha", a, prob, pol, None, tiled, tcfg, cap, dtype, detected))
    base = policy_from_config({**pc, "strategy": "constant", "alpha": 1.0, "beta": None, "period": None}, grid)
    for p in cfg.get("proportions", []):
        mask = InterventionMask("out-of-window-proportion", {"p": p, "rank_by": cfg.get("rank_by", "score")})
        rows.append(_sim_row("p", p, prob, base, mask, tiled, tcfg, cap, dtype, detected))
    cols = ["sweep", "alpha_or_p", "mean_in_window_mass", "mean_entropy", "detected_period"]
    emit(rows_to_csv(rows, cols), args.out)
    return EXIT_OK


def _sim_row(kind, value, prob, policy, mask, tiled, tcfg, cap, dtype, detected):
    row = {"sweep": kind, "alpha_or_p": f"{value:g}", "detected_period": detected}
    if tiled and mask is None:
        res = attend_tiled(prob, policy, tcfg, dtype=dtype)
    else:
        # score-ranked masks need whole logit rows, so they always take the reference path
        res = attend_reference(prob, policy, mask, cap=cap, dtype=dtype)
    row["mean_in_window_mass"] = repr(float(np.mean(res.row_stats.in_window_mass)))
    row["mean_entropy"] = repr(float(np.mean(res.row_stats.entropy)))
    return row


def random_policy(rng, grid: GridShape):
    mode = TEMPORAL_FRAME if rng.random() < 0.7 else TOKEN_INDEX
    unit = grid.t_len if mode == TEMPORAL_FRAME else grid.n_tokens
    kind = rng.choice(["constant", "linear", "parabolic"])
    a1, a2 = rng.uniform(0.4, 1.0, size=2)
    strat = make_strategy(kind, alpha=a1, alpha1=a1, alpha2=a2)
    lo = strat.bounds()[0]
    use_beta = rng.random() < 0.6
    period = float(rng.uniform(2, max(3, unit / 2))) if use_beta else None
    return DecayPolicy(
        strategy=strat,
        train_window=int(rng.integers(1, max(2, unit))),
        seq_len=unit,
        beta=float(rng.uniform(0.2, lo)) if use_beta else None,
        gamma=int(rng.integers(0, 4)),
        period=period,
        position_mode=mode,
    )


def random_grid(rng, l_min, l_max):
    while True:
        target = int(np.exp(rng.uniform(np.log(l_min), np.log(l_max))))
        h = int(rng.integers(1, 5))
        w = int(rng.integers(1, 5))
        t = max(1, target // (h * w))
        if l_min <= t * h * w <= l_max:
            return GridShape(t, h, w)


def kernel_sweep(n_cases=100, l_min=64, l_max=4096, dims=(16, 32, 64), tiles=(16, 32, 64, 128), dtype=np.float64,
                 seed=0, fault=False, workers=1):
    """Reference-vs-tiled comparison over random (problem, policy, tiles) triples.

    Yields one dict per case; the reference is always evaluated in 64-bit.
    """
    rng = np.random.default_rng(seed)
    hook = None
    if fault:
        def hook(lam, qr, kr):
            if qr[0] == 0 and kr[0] == 0:
                lam = lam.copy()
                lam[0, 0] = 0.5 if lam[0, 0] != 0.5 else 0.25
            return lam
    for case in range(n_cases):
        grid = random_grid(rng, l_min, l_max)
        d = int(rng.choice(dims))
        n = grid.n_tokens
        prob_q = rng.standard_normal((n, d))
        prob_k = rng.standard_normal((n, d))
        prob_v = rng.standard_normal((n, d))
        prob = AttentionProblem(prob_q, prob_k, prob_v, grid)
        policy = random_policy(rng, grid)
        cfg = TileConfig(int(rng.choice(tiles)), int(rng.choice(tiles)))
        t0 = time.perf_counter()
        ref = attend_reference(prob, policy, cap=max(n, DEFAULT_CAP))
        out = attend_tiled(prob, policy, cfg, dtype=dtype, workers=workers, lambda_hook=hook)
        err = float(np.max(np.abs(out.O.astype(np.float64) - ref.O)))
        yield {
            "case": case,
            "L_prime": n,
            "grid": grid.to_dict(),
            "D": d,
            "b_q": cfg.b_q,
            "b_kv": cfg.b_kv,
            "policy": policy.to_dict(),
            "max_abs_err": err,
            "seconds": time.perf_counter() - t0,
            "_problem": prob,
        }


def cmd_kernel_check(cfg, args):
    dtype = dtype_of(args.dtype)
    tol = float(cfg.get("tol", 1e-10 if dtype == np.float64 else 1e-3))
    fault = bool(cfg.get("fault", False) or args.inject_fault)
    results = []
    worst = None
    for r in kernel_sweep(
        n_cases=int(args.cases or cfg.get("cases", 100)),
        l_min=int(cfg.get("l_min", 64)),
        l_max=int(cfg.get("l_max", 4096)),
        dims=tuple(cfg.get("dims", (16, 32, 64))),
        tiles=tuple(cfg.get("tiles", (16, 32, 64, 128))),
        dtype=dtype,
        seed=args.seed,
        fault=fault,
        workers=args.workers,
    ):
        prob = r.pop("_problem")
        r.pop("seconds")
        results.append(r)
        if worst is None or r["max_abs_err"] > worst[0]["max_abs_err"]:
            worst = (r, prob)
    max_err = max(r["max_abs_err"] for r in results)
    passed = max_err <= tol
    report = {
        "dtype": args.dtype,
        "tolerance": tol,
        "cases": len(results),
        "max_abs_err": max_err,
        "passed": passed,
        "table": [
            {k: r[k] for k in ("case", "L_prime", "D", "b_q", "b_kv", "max_abs_err")} for r in results
        ],
    }
    if not passed and worst is not None:
        r, prob = worst
        dump_dir = Path(args.out).parent if args.out and args.out != "-" else Path(".")
        stem = dump_dir / f"kernel_check_worst_case_{r['case']}"
        write_bundle(stem, {"Q": prob.Q, "K": prob.K, "V": prob.V},
                     {"grid": r["grid"], "policy": r["policy"], "b_q": r["b_q"], "b_kv": r["b_kv"],
                      "scale": prob.scale, "max_abs_err": r["max_abs_err"]})
        report["worst_case_dump"] = str(stem.with_suffix(".bin"))
    emit(dumps(report), args.out)
    print(f"kernel-check: {'PASS' if passed else 'FAIL'} max_abs_err={max_err:.3e} tol={tol:g}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_TOLERANCE


def load_frames(path, value_range=None, tensor="frames"):
    path = Path(path)
    try:
        if path.is_dir() or path.suffix == ".json":
            seq = FrameSequence.from_manifest(path)
            if value_range is not None:
                seq = FrameSequence(seq.frames, tuple(value_range))
            return seq
        return FrameSequence.from_container(path, tensor, tuple(value_range or (0, 255)))
    except (OSError, ContainerError, KeyError, json.JSONDecodeError, InvalidInputError, ShapeError) as exc:
        raise IOError(f"cannot read frames from {path}: {exc}") from exc


def cmd_repetition(cfg, args):
    src = args.frames or cfg.get("frames")
    if src is None:
        raise ConfigError("repetition needs --frames or a 'frames' config entry")
    if str(src).startswith("fixture:"):
        src = FIXTURES / f"{str(src)[8:]}.bin"
    seq = load_frames(src, cfg.get("value_range"), cfg.get("tensor", "frames"))
    period = args.period if args.period is not None else cfg.get("period")
    if period is None:
        raise ConfigError("repetition needs a dominant period (--period)")
    report = norepeat_score(
        seq,
        int(period),
        threshold=float(args.threshold if args.threshold is not None else cfg.get("threshold", 55.0)),
        search_radius=cfg.get("search_radius"),
        distance=cfg.get("distance", "rms"),
    )
    emit(dumps(report.to_dict()), args.out)
    return EXIT_OK


def cmd_bench(cfg, args):
    sizes = cfg.get("sizes", args.sizes or [1024, 4096, 16384])
    b_q, b_kv = cfg.get("tile", (128, 128))
    d = int(cfg.get("d", 64))
    cap = int(cfg.get("cap", DEFAULT_CAP))
    repeats = int(cfg.get("repeats", 1))
    check = bool(cfg.get("check_error", True))
    dtype = dtype_of(args.dtype)
    rng = np.random.default_rng(args.seed)
    rows = []
    for n in sizes:
        grid = GridShape(int(n))
        prob = AttentionProblem(rng.standard_normal((n, d)), rng.standard_normal((n, d)),
                                rng.standard_normal((n, d)), grid)
        pc = dict(cfg.get("policy") or {"window": max(1, n // 3), "alpha": 0.9, "position_mode": TOKEN_INDEX})
        pc.update(policy_overrides(args))
        policy = policy_from_config(pc, grid)
        ref_out = {}
        for label, pol in (("none", None), ("decay", policy)):
            base = {"L_prime": n, "b_q": b_q, "b_kv": b_kv, "dtype": args.dtype, "policy": label}
            try:
                t0 = time.perf_counter()
                for _ in range(repeats):
                    r = attend_reference(prob, pol, cap=cap, dtype=dtype)
                ms = (time.perf_counter() - t0) * 1e3 / repeats
                ref_out[label] = r.O
                rows.append({**base, "path": "reference", "wall_time_ms": f"{ms:.3f}",
                             "peak_aux_bytes": 4 * n * n * 8, "status": "ok"})
            except ResourceError:
                rows.append({**base, "path": "reference", "status": "resource-error"})
            t0 = time.perf_counter()
            for _ in range(repeats):
                out = attend_tiled(prob, pol, TileConfig(b_q, b_kv), dtype=dtype, workers=args.workers)
            ms = (time.perf_counter() - t0) * 1e3 / repeats
            err = ""
            if check and label in ref_out:
                err = f"{float(np.max(np.abs(out.O - ref_out[label]))):.3e}"
            rows.append({**base, "path": "tiled", "wall_time_ms": f"{ms:.3f}",
                         "peak_aux_bytes": out.peak_aux_bytes, "max_abs_err_vs_ref": err, "status": "ok"})
    cols = ["L_prime", "b_q", "b_kv", "dtype", "path", "policy", "wall_time_ms", "peak_aux_bytes",
            "max_abs_err_vs_ref", "status"]
    emit(rows_to_csv(rows, cols), args.out)
    return EXIT_OK


COMMANDS = {
    "analyze-spec": cmd_analyze_spec,
    "simulate": cmd_simulate,
    "kernel-check": cmd_kernel_check,
    "repetition": cmd_repetition,
    "bench": cmd_bench,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    common.add_argument("--workers", type=int, default=1, help="1 guarantees deterministic ordering")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    pol = argparse.ArgumentParser(add_help=False)
    pol.add_argument("--strategy", choices=["constant", "linear", "parabolic"])
    pol.add_argument("--alpha", type=float)
    pol.add_argument("--alpha1", type=float)
    pol.add_argument("--alpha2", type=float)
    pol.add_argument("--beta", type=float)
    pol.add_argument("--gamma", type=int)
    pol.add_argument("--period", type=float)
    pol.add_argument("--window", type=int)
    pol.add_argument("--position-mode", choices=[TEMPORAL_FRAME, TOKEN_INDEX])

    p = argparse.ArgumentParser(prog="extrapattn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze-spec", parents=[common], help="classify a rotary frequency set")
    a.add_argument("--seq-len", type=int)

    s = sub.add_parser("simulate", parents=[common, pol], help="alpha / masking sweep on a planted problem")
    s.add_argument("--tiled", action="store_true")

    k = sub.add_parser("kernel-check", parents=[common], help="tiled vs reference equivalence sweep")
    k.add_argument("--cases", type=int)
    k.add_argument("--inject-fault", action="store_true", help="perturb one decay factor (test hook)")

    r = sub.add_parser("repetition", parents=[common], help="NoRepeat score for a frame sequence")
    r.add_argument("--frames", help="tensor container, manifest directory, or fixture:<name>")
    r.add_argument("--period", type=int)
    r.add_argument("--threshold", type=float)

    b = sub.add_parser("bench", parents=[common, pol], help="time reference vs tiled attention")
    b.add_argument("--sizes", type=int, nargs="+")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ExtrapAttnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
