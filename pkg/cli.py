"""
cli.py

Command-line surface.

  python cli.py validate configs/two_agent.json
  python cli.py run configs/two_agent.json --out out/two_agent
  python cli.py sweep configs/two_agent.json --seeds 1,2,3 --out out/sweep
  python cli.py hypothesis h1 configs/h1.json --out out/h1
  python cli.py align configs/h3.json --sender alpha --receiver beta --bits
  python cli.py ib configs/two_agent.json --target A --basis identity --cardinality 2 --beta 0.1:20:0.5
  python cli.py rd configs/two_agent.json --grid 0,0.1,0.2,0.5

Seed precedence: --seed, then MIM_SEED, then the config's seed.
Exit codes: 0 success, 1 hypothesis fail, 2 config error, 3 runtime error.
Progress goes to stderr; JSON results to stdout or --out.
"""

import argparse
import logging
import math
import os
import sys

import numpy as np
import pandas as pd

import canonical_json
from align import alignment_options, optimize_alignment, reconstructability_matrix
from engine import build_states, curves, run
from probkit import JointDist, d_max, d_min, hamming, ib_curve, ib_solve, rd_curve
from run_config import CONFIG_ERRORS, SEED_ENV, parse_config, resolve_seed, with_seed
from scenarios import ConfigMismatchError, run_hypothesis

logger = logging.getLogger(__name__)

# -------- CONFIGURATION --------
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
METRICS_FILE = "metrics.json"
CURVES_FILE = "curves.csv"
RECORD_FILE = "record.json"
INFO_FIELDS = ("i_ot", "i_ty", "objective", "R", "delta_I", "mean_delta_I", "max_delta_I", "receiver_error")
# --------------------------------


def parse_args(argv=None):
    p = argparse.ArgumentParser(description="Desk-scale phase inference simulator.")
    p.add_argument("--verbose", action="store_true", help="DEBUG logging.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("config", help="Run config JSON.")
        sp.add_argument("--seed", type=int, default=None, help=f"Overrides {SEED_ENV} and the config seed.")
        sp.add_argument("--bits", action="store_true", help="Show information quantities in bits.")
        if out:
            sp.add_argument("--out", default=None, help="Output directory (default: print to stdout).")

    common(sub.add_parser("validate", help="Parse and check a config."), out=False)

    sp = sub.add_parser("run", help="Run the engine and emit metrics.json / curves.csv.")
    common(sp)
    sp.add_argument("--record", action="store_true", help="Also write the full event record.")

    sp = sub.add_parser("sweep", help="Run once per seed and merge metrics.")
    common(sp)
    sp.add_argument("--seeds", required=True, help="Comma-separated seeds, e.g. 1,2,3.")

    sp = sub.add_parser("hypothesis", help="Run one of the H1-H4 scenarios.")
    sp.add_argument("id", type=str.upper, choices=["H1", "H2", "H3", "H4"])
    common(sp)

    sp = sub.add_parser("align", help="Align every admissible sender candidate into a receiver.")
    common(sp)
    sp.add_argument("--sender", required=True)
    sp.add_argument("--receiver", required=True)
    sp.add_argument("--mode", choices=["exhaustive", "greedy"], default=None)
    sp.add_argument("--options", action="store_true", help="Best channel per receiver candidate as well.")
    sp.add_argument("--matrix", action="store_true", help="Every ordered agent pair instead.")

    sp = sub.add_parser("ib", help="Information bottleneck for one (target, basis).")
    common(sp)
    sp.add_argument("--target", required=True)
    sp.add_argument("--basis", required=True)
    sp.add_argument("--cardinality", type=int, required=True)
    sp.add_argument("--beta", required=True, help="Value, list a,b,c or range start:stop:step.")

    sp = sub.add_parser("rd", help="Rate-distortion curve on a distortion grid.")
    common(sp)
    sp.add_argument("--grid", required=True, help="Comma-separated distortion values.")

    return p.parse_args(argv)


## -------------------------------------------------------------- ##
## Output helpers ##

def _floats(text, name):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"--{name} expects comma-separated numbers, got '{text}'") from None


def parse_betas(text):
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("--beta range needs a positive step")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(max(n, 0))]
    return _floats(text, "beta")


def to_bits(doc):
    """Copy of doc with information quantities divided by ln 2."""
    if isinstance(doc, dict):
        return {k: (v / math.log(2) if k in INFO_FIELDS and isinstance(v, float) else to_bits(v))
                for k, v in doc.items()}
    if isinstance(doc, list):
        return [to_bits(v) for v in doc]
    return doc


def _emit_json(doc, args, filename):
    if args.bits:
        doc = to_bits(doc)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, filename)
        canonical_json.write_canonical(path, doc)
        print(f"[DONE] Wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(canonical_json.dumps(doc))


def curves_csv(rows):
    df = pd.DataFrame(rows, columns=["series", "x", "y"])
    return df.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def emit_metrics(record, out_dir, outcome=None, write_record=False):
    """Write metrics.json (canonical) and curves.csv atomically; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    metrics = {"digest": None, "config_digest": None, "seed": None, "steps": 0,
               "agents": {}, "population_reconstruction_error": 0.0}
    rows = []
    if record is not None:
        metrics.update(record.metrics)
        metrics.update({"name": record.name, "digest": record.digest(),
                        "config_digest": record.config_digest, "seed": record.seed})
        rows = curves(record)
    if outcome is not None:
        metrics["hypothesis"] = outcome.to_dict()

    paths = [os.path.join(out_dir, METRICS_FILE), os.path.join(out_dir, CURVES_FILE)]
    canonical_json.write_canonical(paths[0], metrics)
    canonical_json.write_atomic(paths[1], curves_csv(rows))
    if write_record and record is not None:
        paths.append(os.path.join(out_dir, RECORD_FILE))
        canonical_json.write_canonical(paths[-1], record.to_dict())
    return paths


## -------------------------------------------------------------- ##
## Commands ##

def cmd_validate(cfg, args):
    print(f"[DONE] {args.config} is valid: {len(cfg.agents)} agents, {len(cfg.phase_keys)} phase points, "
          f"digest {canonical_json.digest(cfg.to_dict())}", file=sys.stderr)
    return EXIT_OK


def cmd_run(cfg, args):
    print(f"[INFO] Running '{cfg.name}' for {cfg.engine.steps} steps (seed {cfg.seed})", file=sys.stderr)
    record = run(cfg)
    if args.out:
        for path in emit_metrics(record, args.out, write_record=args.record):
            print(f"[DONE] Wrote {path}", file=sys.stderr)
    else:
        _emit_json(record.metrics, args, METRICS_FILE)
    print(f"[DONE] Record digest {record.digest()}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(cfg, args):
    seeds = [int(s) for s in _floats(args.seeds, "seeds")]
    runs, rows = [], []
    for seed in seeds:
        print(f"[INFO] Seed {seed}", file=sys.stderr)
        record = run(with_seed(cfg, seed))
        runs.append({"seed": seed, "digest": record.digest(), "metrics": record.metrics})
        rows.extend((f"{seed}/{series}", x, y) for series, x, y in curves(record))
    doc = {"name": cfg.name, "runs": runs}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        canonical_json.write_canonical(os.path.join(args.out, METRICS_FILE), doc)
        canonical_json.write_atomic(os.path.join(args.out, CURVES_FILE), curves_csv(rows))
        print(f"[DONE] Wrote {len(runs)} runs to {args.out}", file=sys.stderr)
    else:
        _emit_json(doc, args, METRICS_FILE)
    return EXIT_OK


def cmd_hypothesis(cfg, args):
    outcome = run_hypothesis(cfg, args.id)
    verdict = "PASS" if outcome.passed else "FAIL"
    print(f"[DONE] {outcome.id}: statistic {outcome.statistic:.6g}, threshold {outcome.threshold:.6g} -> {verdict}",
          file=sys.stderr)
    if args.out:
        emit_metrics(None, args.out, outcome)
        print(f"[DONE] Wrote {os.path.join(args.out, METRICS_FILE)}", file=sys.stderr)
    else:
        _emit_json({"hypothesis": outcome.to_dict()}, args, METRICS_FILE)
    return EXIT_OK if outcome.passed else EXIT_FAIL


def cmd_align(cfg, args):
    states = build_states(cfg)
    for role in (args.sender, args.receiver):
        if role not in states:
            raise ConfigMismatchError(f"no agent '{role}' in {args.config}")
    mode = args.mode or cfg.engine.align_mode
    eng = cfg.engine
    if args.matrix:
        doc = {"pairs": reconstructability_matrix(cfg.world, [s.agent for s in states.values()],
                                                  {k: s.space for k, s in states.items()},
                                                  eng.delta, mode, eng.exhaustive_cap)}
        _emit_json(doc, args, "alignment.json")
        return EXIT_OK

    sender, receiver = states[args.sender], states[args.receiver]
    kappa = sender.agent.state.zeta.kappa
    cache, reports = {}, []
    for c in sender.pool:
        rep = optimize_alignment(cfg.world, c, kappa, receiver.agent.state, receiver.space,
                                 eng.delta, mode, eng.exhaustive_cap, cache)
        item = rep.to_dict()
        if args.options:
            item["options"] = [o.to_dict() for o in alignment_options(
                cfg.world, c, kappa, receiver.agent.state, receiver.space, eng.delta, mode, eng.exhaustive_cap, cache)]
        reports.append(item)
        print(f"[INFO] {c.key} -> {rep.receiver}: {rep.klass}", file=sys.stderr)
    _emit_json({"sender": args.sender, "receiver": args.receiver, "mode": mode, "reports": reports},
               args, "alignment.json")
    return EXIT_OK


def cmd_ib(cfg, args):
    w = cfg.world
    basis = {b.id: b for b in cfg.bases}.get(args.basis)
    if basis is None:
        raise ConfigMismatchError(f"unknown basis '{args.basis}'")
    if args.target not in w.target_names:
        raise ConfigMismatchError(f"unknown target '{args.target}'")
    p_oy = w.target_joints[args.target]
    p_fy = np.zeros((basis.feature_size, p_oy.shape[1]))
    np.add.at(p_fy, list(basis.map), p_oy)
    joint = JointDist(p_fy, basis.id, args.target)
    betas = parse_betas(args.beta)

    if len(betas) == 1 and ":" not in args.beta:
        res = ib_solve(joint, args.cardinality, betas[0], cfg.engine.ib, cfg.seed)
        doc = {"beta": res.beta, "i_ot": res.i_ot, "i_ty": res.i_ty, "objective": res.objective,
               "iterations": res.iterations, "converged": res.converged,
               "encoder": res.encoder.rows.tolist()}
    else:
        points = ib_curve(joint, args.cardinality, betas, cfg.engine.ib, cfg.seed)
        doc = {"curve": [{"beta": pt.beta, "i_ot": pt.i_ot, "i_ty": pt.i_ty, "objective": pt.objective,
                          "converged": pt.converged} for pt in points]}
    _emit_json(doc, args, "ib.json")
    return EXIT_OK


def _rd_problem(cfg):
    rd = cfg.rd or {"source": "observations", "distortion": "hamming"}
    w = cfg.world
    source = w.obs_marginal.probs if rd["source"] == "observations" else w.prior(rd["source"]).probs
    if rd["distortion"] == "hamming":
        distortion = hamming(source.size)
    else:
        distortion = np.array(rd["distortion"], dtype=float)
    return source, distortion


def cmd_rd(cfg, args):
    source, distortion = _rd_problem(cfg)
    grid = _floats(args.grid, "grid")
    points = rd_curve(source, distortion, grid)
    doc = {"d_min": d_min(source, distortion), "d_max": d_max(source, distortion),
           "curve": [{"D": D, "R": R} for D, R in points]}
    _emit_json(doc, args, "rd.json")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "hypothesis": cmd_hypothesis,
    "align": cmd_align,
    "ib": cmd_ib,
    "rd": cmd_rd,
}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s %(message)s")
    try:
        cfg = parse_config(args.config)
        cfg = with_seed(cfg, resolve_seed(cfg.seed, args.seed, os.environ.get(SEED_ENV)))
    except (OSError, *CONFIG_ERRORS) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigMismatchError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"[ERROR] {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
