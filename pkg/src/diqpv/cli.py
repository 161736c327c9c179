"""Command line pipeline: simulate, analyze, plan, geometry, build-tf, fit.

One run of the verification experiment is a directory of one-minute
binary trial files.  `simulate` writes such a directory from an honest or
adversarial model, `analyze` segments it into instances and scores them,
`plan` turns a calibration counts table into runtime trade-off curves,
`geometry` sizes the spacetime target regions, and `build-tf` / `fit`
expose the factor-construction and fitting steps on their own.

Exit codes: 0 completed, 2 at least one instance failed verification,
3 infeasible operating point.  All reports embed the resolved
configuration and tool version; physical config keys carry unit suffixes
(ns, m, deg).  Every subcommand is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__
from .errors import DiqpvError, EmptyRegionError, InfeasiblePlanError
from .estimation import ml_fit_quantum, regularize
from .geometry import (
    TimingGeometry,
    quantum_advantage,
    region_size,
    region_spec,
)
from .polytopes import chsh_values
from .protocol import (
    FileTrialSource,
    ProtocolParams,
    achievable_delta_log2,
    achievable_rth,
    plan_entanglement,
    required_trials,
    segment_and_analyze,
)
from .reference import calibration_counts, timing_geometry
from .simulator import (
    AdversaryModel,
    HonestProverModel,
    adversary_distribution,
    honest_distribution,
    sample_trials,
    stream_key,
)
from .testfactor import (
    assemble_robust,
    build_wlr,
    gain_variance,
    lambda_max,
    testfactor_to_json,
)
from .trialdata import (
    CountsTable,
    JointSettingsDistribution,
    read_counts_csv,
    write_trials,
)

TRIALS_PER_FILE = 15_000_000
TRIAL_RATE_HZ = 250_000.0
PLAN_EPSILONS = (0.84134, 0.97725, 0.99865)


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _write_hist_csv(path, values, bins: int = 50) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        counts, edges = np.zeros(0), np.zeros(1)
    else:
        counts, edges = np.histogram(values, bins=bins)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo!r},{hi!r},{int(c)}\n")


def _provenance(args, extra: dict | None = None) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    if extra:
        config.update(extra)
    return {"tool": "diqpv", "version": __version__, "config": config}


def _counts_from_arg(path) -> CountsTable:
    return read_counts_csv(path) if path else calibration_counts()


def _timing_from_arg(path) -> TimingGeometry:
    if not path:
        return timing_geometry()
    cfg = _load_json(path)
    known = set(TimingGeometry.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown timing keys {sorted(unknown)}; expected {sorted(known)}")
    return TimingGeometry(**cfg)


def _resolve_model(args):
    """Model selection: --model shortcut or a config file's model block."""
    spec: dict = {"kind": "honest"}
    if getattr(args, "config", None):
        cfg = _load_json(args.config)
        spec = dict(cfg.get("model", spec))
    if args.model and args.model != "config":
        if args.model == "honest":
            spec = {"kind": "honest"}
        elif args.model.startswith("lr:"):
            spec = {"kind": "lr_vertex", "index": int(args.model[3:])}
        else:
            raise ValueError(f"unknown model {args.model!r} (use honest, lr:K, or config)")
    kind = spec.get("kind", "honest")
    if kind == "honest":
        fields = {k: v for k, v in spec.items() if k != "kind"}
        for key in ("angles_a_deg", "angles_p_deg"):
            if key in fields:
                fields[key] = tuple(fields[key])
        if "amp_a" in fields or "amp_b" in fields:
            a = fields.get("amp_a", 0.0)
            b = fields.get("amp_b", 0.0)
            norm = math.hypot(a, b)
            if norm == 0.0:
                raise ValueError("state amplitudes must not both be zero")
            fields["amp_a"], fields["amp_b"] = a / norm, b / norm
        model = HonestProverModel(**fields)
        return spec | {"kind": "honest"}, honest_distribution(model)
    if kind == "lr_vertex":
        model = AdversaryModel.lr_vertex(int(spec["index"]))
    elif kind == "lr_mixture":
        model = AdversaryModel.lr_mixture(np.asarray(spec["weights"], dtype=np.float64))
    elif kind == "ns3":
        model = AdversaryModel.ns3_point(np.asarray(spec["mu"], dtype=np.float64))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return spec, adversary_distribution(model)


def _settings_from_config(args) -> JointSettingsDistribution:
    if getattr(args, "config", None):
        cfg = _load_json(args.config)
        if "settings_weights" in cfg:
            return JointSettingsDistribution(
                table=np.asarray(cfg["settings_weights"], dtype=np.float64)
            )
    return JointSettingsDistribution.uniform()


def cmd_simulate(args) -> int:
    if (args.files is None) == (args.duration_minutes is None):
        raise ValueError("give exactly one of --files or --duration-minutes")
    n_files = args.files if args.files is not None else int(args.duration_minutes)
    if n_files < 0:
        raise ValueError("file count must be nonnegative")
    error_files = set()
    if args.error_files:
        error_files = {int(tok) for tok in args.error_files.split(",") if tok.strip()}
    model_spec, sigma3 = _resolve_model(args)
    nu = _settings_from_config(args)
    os.makedirs(args.out, exist_ok=True)

    def write_one(i: int) -> dict:
        codes = sample_trials(sigma3, nu, args.trials_per_file, stream_key(args.seed, i))
        name = f"trials-{i:04d}.qpvt"
        write_trials(os.path.join(args.out, name), codes, detector_error=i in error_files)
        return {"file": name, "trials": int(codes.size), "detector_error": i in error_files}

    if args.threads and args.threads > 1 and n_files > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            entries = list(pool.map(write_one, range(n_files)))
    else:
        entries = [write_one(i) for i in range(n_files)]
    manifest = _provenance(args, {"model": model_spec})
    manifest["files"] = entries
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"wrote {n_files} file(s) x {args.trials_per_file} trials to {args.out}")
    return 0


def _protocol_params(args, n: int) -> ProtocolParams:
    r_th = args.rth
    if r_th is None:
        r_th = 8e-6 if args.mode == "entanglement" else 0.0
    return ProtocolParams(
        delta=2.0 ** (-args.delta_log2),
        epsilon=args.epsilon,
        n=n,
        mode=args.mode,
        r_th=r_th,
        trial_rate=TRIAL_RATE_HZ,
    )


def _auto_trials(sources, args, nu, mismatch_d: float) -> int:
    """Size instances from the first calibration window, like a plan would."""
    error_free = [s for s in sources if not s.error]
    if len(error_free) < 10:
        raise DiqpvError(f"need 10 error-free calibration files, have {len(error_free)}")
    counts = CountsTable.zeros()
    for src in error_free[:10]:
        counts = counts + src.counts()
    sigma = ml_fit_quantum(counts)
    sigma3 = regularize(sigma, mismatch_d)
    wlr = build_wlr(sigma, nu)
    tf = assemble_robust(wlr, lambda_max(wlr, nu), nu)
    delta = 2.0 ** (-args.delta_log2)
    if args.mode == "entanglement":
        r_th = args.rth if args.rth is not None else 8e-6
        plan = plan_entanglement(tf, sigma3, r_th, delta, args.epsilon, nu=nu)
        return plan.n
    g, v = gain_variance(tf, sigma3, nu)
    return required_trials(g, v, delta, args.epsilon)


def cmd_analyze(args) -> int:
    names = sorted(f for f in os.listdir(args.data_dir) if f.endswith(".qpvt"))
    if not names:
        raise DiqpvError(f"no .qpvt files in {args.data_dir}")
    sources = [FileTrialSource(os.path.join(args.data_dir, f)) for f in names]
    nu = JointSettingsDistribution.uniform()
    n = args.trials_per_instance
    if n is None:
        n = _auto_trials(sources, args, nu, args.mismatch_d)
    params = _protocol_params(args, n)
    instances = segment_and_analyze(sources, params, nu=nu, mismatch_d=args.mismatch_d)

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for inst in instances:
        res = inst.result
        rows.append({
            "index": inst.index,
            "passed": res.passed,
            "log2_p": res.log2_p,
            "r_lb": res.r_lb,
            "trials_real": res.trials_real,
            "trials_padded": res.trials_padded,
            "lam_mix": inst.lam_mix,
            "data_files": list(inst.data_labels),
            "calibration_files": list(inst.calibration_labels),
        })
    n_pass = sum(r["passed"] for r in rows)
    report = _provenance(args, {"trials_per_instance": n})
    report["instances"] = rows
    report["summary"] = {
        "instances": len(rows),
        "passed": n_pass,
        "failed": len(rows) - n_pass,
        "pass_fraction": n_pass / len(rows) if rows else None,
    }
    _write_json(os.path.join(args.out, "report.json"), report)
    with open(os.path.join(args.out, "instances.csv"), "w", encoding="utf-8") as fh:
        fh.write("index,passed,log2_p,r_lb,trials_real,trials_padded,lam_mix,"
                 "data_files,calibration_files\n")
        for r in rows:
            fh.write(
                f"{r['index']},{int(r['passed'])},{r['log2_p']!r},"
                f"{'' if r['r_lb'] is None else repr(r['r_lb'])},"
                f"{r['trials_real']},{r['trials_padded']},"
                f"{'' if r['lam_mix'] is None else repr(r['lam_mix'])},"
                f"{';'.join(r['data_files'])},{';'.join(r['calibration_files'])}\n"
            )
    _write_hist_csv(os.path.join(args.out, "hist_log2p.csv"), [r["log2_p"] for r in rows])
    if args.mode == "entanglement":
        _write_hist_csv(
            os.path.join(args.out, "hist_rlb.csv"),
            [r["r_lb"] for r in rows if r["r_lb"] is not None],
        )
    print(f"{len(rows)} instance(s), {n_pass} passed, {len(rows) - n_pass} failed")
    return 0 if n_pass == len(rows) else 2


def cmd_plan(args) -> int:
    counts = _counts_from_arg(args.counts)
    nu = JointSettingsDistribution.uniform()
    sigma = ml_fit_quantum(counts)
    sigma3 = regularize(sigma, args.mismatch_d)
    wlr = build_wlr(sigma, nu)
    lam_star = lambda_max(wlr, nu)
    tf = assemble_robust(wlr, lam_star, nu)
    g, v = gain_variance(tf, sigma3, nu)
    delta = 2.0 ** (-args.delta_log2)
    r_th = args.rth if args.rth is not None else (8e-6 if args.mode == "entanglement" else 0.0)

    os.makedirs(args.out, exist_ok=True)
    report = _provenance(args)
    report["calibration"] = {
        "total_trials": counts.total,
        "gain_bits": g,
        "variance_bits": v,
        "mismatch_factor": lam_star,
    }
    try:
        if args.mode == "entanglement":
            plan = plan_entanglement(tf, sigma3, r_th, delta, args.epsilon, nu=nu)
            n_req = plan.n
            report["operating_point"] = {
                "mode": "entanglement",
                "delta_log2": args.delta_log2,
                "epsilon": args.epsilon,
                "r_th": r_th,
                "trials": n_req,
                "runtime_seconds": n_req / TRIAL_RATE_HZ,
                "lam_mix": plan.lam_mix,
                "effective_gain_bits": plan.effective_gain_bits,
            }
        else:
            n_req = required_trials(g, v, delta, args.epsilon)
            report["operating_point"] = {
                "mode": "basic",
                "delta_log2": args.delta_log2,
                "epsilon": args.epsilon,
                "trials": n_req,
                "runtime_seconds": n_req / TRIAL_RATE_HZ,
            }
    except InfeasiblePlanError as exc:
        print(f"infeasible operating point: {exc}", file=sys.stderr)
        return 3

    runtimes = [float(t) for t in np.linspace(0.0, args.max_minutes * 60.0, args.points + 1)[1:]]
    with open(os.path.join(args.out, "tradeoff_delta.csv"), "w", encoding="utf-8") as fh:
        fh.write("epsilon,runtime_seconds,delta_log2\n")
        for eps in PLAN_EPSILONS:
            for t in runtimes:
                n = int(t * TRIAL_RATE_HZ)
                fh.write(f"{eps},{t!r},{achievable_delta_log2(n, g, v, eps)!r}\n")
    if args.mode == "entanglement":
        with open(os.path.join(args.out, "tradeoff_rth.csv"), "w", encoding="utf-8") as fh:
            fh.write("epsilon,runtime_seconds,r_th\n")
            for t in runtimes:
                n = int(t * TRIAL_RATE_HZ)
                rate = achievable_rth(tf, sigma3, n, delta, args.epsilon)
                fh.write(f"{args.epsilon},{t!r},{rate!r}\n")
    _write_json(os.path.join(args.out, "report.json"), report)
    op = report["operating_point"]
    print(f"{op['mode']} operating point: {op['trials']} trials "
          f"({op['runtime_seconds']:.1f} s at {TRIAL_RATE_HZ:.0f} Hz)")
    return 0


def cmd_geometry(args) -> int:
    tg = _timing_from_arg(args.config)
    spec = region_spec(tg)
    dims = (1, 2, 3) if args.dim == "all" else (int(args.dim),)
    os.makedirs(args.out, exist_ok=True)

    sizes: dict[str, dict] = {}
    for dim in dims:
        q = region_size("quantum", spec, dim, args.mc_size, args.seed, args.threads)
        union = region_size("classical", spec, dim, args.mc_size, args.seed + 1, args.threads)
        lens_a = region_size("lens_a", spec, dim, args.mc_size, args.seed + 2, args.threads)
        lens_b = region_size("lens_b", spec, dim, args.mc_size, args.seed + 3, args.threads)
        if dim == 1:
            comparable = (lens_a[0] + lens_b[0], math.hypot(lens_a[1], lens_b[1]))
            ideal = (spec.d_sep, 0.0)
        else:
            comparable = union
            ideal = (0.0, 0.0)
        sizes[f"{dim}d"] = {
            "quantum": list(q),
            "lens_a": list(lens_a),
            "lens_b": list(lens_b),
            "classical_union": list(union),
            "classical_comparable": list(comparable),
            "classical_ideal": list(ideal),
            "quantum_degenerate": q[0] == 0.0,
        }

    advantage: dict[str, dict] = {}
    for dim in dims:
        advantage[f"{dim}d"] = {}
        for comparator in ("ideal", "comparable"):
            entry: dict = {"comparator": comparator}
            try:
                res = quantum_advantage(
                    tg, dim, comparator,
                    mc_outer=args.mc_outer, mc_inner=args.mc_inner,
                    seed=args.seed, threads=args.threads,
                )
            except EmptyRegionError as exc:
                entry.update({"ratio": None, "sigma": None, "degenerate": True,
                              "note": f"empty quantum region: {exc}"})
            else:
                if res.degenerate:
                    entry.update({"ratio": None, "sigma": None, "degenerate": True,
                                  "note": "ideal classical region has zero size above 1D"})
                else:
                    entry.update({
                        "ratio": res.ratio, "sigma": res.sigma, "degenerate": False,
                        "empty_fraction": res.empty_fraction,
                    })
                    _write_hist_csv(
                        os.path.join(args.out, f"hist_advantage_{dim}d_{comparator}.csv"),
                        res.samples,
                    )
            advantage[f"{dim}d"][comparator] = entry

    report = _provenance(args)
    report["region_lengths_m"] = asdict(spec)
    report["sizes"] = sizes
    report["advantage"] = advantage
    _write_json(os.path.join(args.out, "report.json"), report)
    for dim in dims:
        for comparator in ("ideal", "comparable"):
            entry = advantage[f"{dim}d"][comparator]
            shown = "degenerate" if entry["degenerate"] else (
                f"{entry['ratio']:.3f} +- {entry['sigma']:.3f}")
            print(f"{dim}D {comparator}: {shown}")
    return 0


def cmd_build_tf(args) -> int:
    counts = _counts_from_arg(args.counts)
    nu = JointSettingsDistribution.uniform()
    sigma = ml_fit_quantum(counts)
    sigma3 = regularize(sigma, args.mismatch_d)
    wlr = build_wlr(sigma, nu)
    lam_star = lambda_max(wlr, nu)
    tf = assemble_robust(wlr, lam_star, nu, meta={"calibration_trials": counts.total})
    g, v = gain_variance(tf, sigma3, nu)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(testfactor_to_json(tf))
        fh.write("\n")
    print(f"mismatch factor {lam_star:.10f}, gain {g:.6e} bits/trial, "
          f"variance {v:.6e}; wrote {args.out}")
    return 0


def cmd_fit(args) -> int:
    counts = _counts_from_arg(args.counts)
    sigma = ml_fit_quantum(counts)
    payload = {
        "format": "diqpv-fit",
        "version": 1,
        "tool_version": __version__,
        "total_trials": counts.total,
        "matched": sigma.table.tolist(),
        "axes": ["mqa", "mqp", "oqa", "oqp"],
        "chsh_correlators": list(chsh_values(sigma.table)),
    }
    _write_json(args.out, payload)
    chsh_max = max(abs(c) for c in payload["chsh_correlators"])
    print(f"fit over {counts.total} trials, max |CHSH| = {chsh_max:.10f}; wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diqpv",
        description="Device-independent position verification pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"diqpv {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_protocol_flags(p):
        p.add_argument("--mode", choices=("basic", "entanglement"), default="basic")
        p.add_argument("--delta-log2", type=float, default=64.0,
                       help="soundness as log2(1/delta)")
        p.add_argument("--epsilon", type=float, default=0.97725,
                       help="completeness target")
        p.add_argument("--rth", type=float, default=None,
                       help="entanglement threshold (nats/trial); default 8e-6 "
                            "in entanglement mode")
        p.add_argument("--mismatch-d", type=float, default=2e-6,
                       help="mismatch mass spread during regularization")

    p = sub.add_parser("simulate", help="write one-minute binary trial files")
    p.add_argument("--out", required=True)
    p.add_argument("--files", type=int, default=None)
    p.add_argument("--duration-minutes", type=float, default=None)
    p.add_argument("--trials-per-file", type=int, default=TRIALS_PER_FILE)
    p.add_argument("--model", default="config",
                   help="honest (default), lr:K, or config to use --config")
    p.add_argument("--config", default=None, help="JSON model/settings config")
    p.add_argument("--error-files", default="",
                   help="comma-separated indices flagged as detector-error files")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="segment a run directory into scored instances")
    p.add_argument("data_dir")
    p.add_argument("--out", required=True)
    add_protocol_flags(p)
    p.add_argument("--trials-per-instance", type=int, default=None,
                   help="override the planned per-instance trial count")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plan", help="runtime trade-off curves from calibration counts")
    p.add_argument("--out", required=True)
    p.add_argument("--counts", default=None, help="counts CSV; default bundled reference")
    add_protocol_flags(p)
    p.add_argument("--max-minutes", type=float, default=10.0)
    p.add_argument("--points", type=int, default=200)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("geometry", help="target region sizes and advantage ratios")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON timing geometry (ns, m keys)")
    p.add_argument("--dim", choices=("1", "2", "3", "all"), default="all")
    p.add_argument("--mc-size", type=int, default=1_000_000,
                   help="inner samples for region sizes")
    p.add_argument("--mc-outer", type=int, default=100_000,
                   help="parameter draws for advantage ratios")
    p.add_argument("--mc-inner", type=int, default=1_000_000,
                   help="inner samples for advantage ratios")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("build-tf", help="build and certify a test factor from counts")
    p.add_argument("--out", required=True, help="output factor JSON path")
    p.add_argument("--counts", default=None, help="counts CSV; default bundled reference")
    p.add_argument("--mismatch-d", type=float, default=2e-6)
    p.set_defaults(func=cmd_build_tf)

    p = sub.add_parser("fit", help="maximum-likelihood fit of calibration counts")
    p.add_argument("--out", required=True, help="output fit JSON path")
    p.add_argument("--counts", default=None, help="counts CSV; default bundled reference")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasiblePlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return 3
    except (DiqpvError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
