"""Command-line entry point: ``cvqkdsim {run,calibrate,optimize-sop,reconcile}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .channel import random_axis, rotation
from .core import RngStream, lookup_link
from .harness.config import load_config
from .harness.protocol import run
from .harness.reports import skr_report
from .polctl import JonesObjective, PaddleState, SpsaConfig, optimize_polarization, write_trace_csv
from .recon.ldpc import available_codes, load_code, snr_for_beta
from .recon.pipeline import adapt_rate, reconcile
from .rxdsp import DetectorConfig, calibration_capture
from .security import calibrate_snu


def _cmd_run(args) -> int:
    cfg = load_config(args.config, link=args.link, rounds=args.rounds, seed=args.seed,
                      fidelity=args.fidelity, v_mod=args.v_mod,
                      recon_max_frames=args.recon_frames)
    res = run(cfg, args.out)
    for rec in res.records:
        print(f"round {rec.round_index}: {rec.states_measured} states, "
              f"SKR {rec.skr_kbps:.1f} kbps, duty {rec.duty_cycle:.2f}, "
              f"{rec.final_key_bits} key bits")
    print(f"{cfg.link}: {skr_report(res.records)}; {len(res.alice_keys)} key pairs -> {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    det = DetectorConfig(elec_noise=args.elec_noise, gain=args.gain)
    rng = RngStream(args.seed).generator
    var_on, var_off = calibration_capture(det, rng, args.samples)
    cal = calibrate_snu(var_on, var_off)
    out = {"var_on": var_on, "var_off": var_off, "snu_factor": cal.u, "v_el": cal.v_el,
           "samples": args.samples, "seed": args.seed}
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_optimize(args) -> int:
    profile = lookup_link(args.link)
    rng = RngStream(args.seed)
    init = rng.substream("misalignment")
    sop = rotation(init.uniform(0, math.pi), random_axis(init))
    obj = JonesObjective(sop, floor=0.1, noise=args.noise, rng=rng.substream("noise").generator,
                         sop_model=profile.sop_model)
    cfg = SpsaConfig(n_iter=args.iters, measurement_noise=args.noise)
    state, trace = optimize_polarization(PaddleState.neutral(), obj, cfg,
                                         rng.substream("spsa").generator)
    if args.out:
        write_trace_csv(args.out, trace)
    print(f"R: {trace[0].r_true:.4f} -> {trace[-1].r_true:.4f} of R_max; "
          f"voltages {', '.join(f'{v:.3f}' for v in state.voltages)}")
    return 0


def _cmd_reconcile(args) -> int:
    code = load_code(args.code)
    snr = args.snr if args.snr is not None else snr_for_beta(code.rate, args.beta)
    rng = RngStream(args.seed)
    adapt = adapt_rate(code, snr, args.beta) if args.adapt else None
    n_ch = adapt.n_channel if adapt else code.n
    x = rng.substream("alice").generator.standard_normal(n_ch * args.frames)
    y = x * math.sqrt(snr) + rng.substream("noise").generator.standard_normal(x.size)
    out = reconcile(code, x, y, math.sqrt(snr), 1.0, rng.substream("recon").generator,
                    llr_scale=args.llr_scale, adapt=adapt, max_iters=args.max_iters, snr=snr)
    text = out.report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if not np.array_equal(out.alice_bits, out.bob_bits):
        print("error: verified keys differ", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvqkdsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="full multi-round protocol run")
    r.add_argument("--config", help="INI file with a [run] section")
    r.add_argument("--link")
    r.add_argument("--rounds", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--fidelity", choices=["symbol", "waveform"])
    r.add_argument("--v-mod", type=float)
    r.add_argument("--recon-frames", type=int, help="code frames reconciled per round")
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("calibrate", help="vacuum and electronic-noise calibration")
    c.add_argument("--samples", type=int, default=10_000_000)
    c.add_argument("--elec-noise", type=float, default=0.1)
    c.add_argument("--gain", type=float, default=1.0)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=_cmd_calibrate)

    o = sub.add_parser("optimize-sop", help="SPSA from a random misalignment")
    o.add_argument("--link", default="L0")
    o.add_argument("--iters", type=int, default=30)
    o.add_argument("--noise", type=float, default=0.01)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", help="trace CSV")
    o.set_defaults(func=_cmd_optimize)

    k = sub.add_parser("reconcile", help="reconcile synthetic Gaussian data")
    k.add_argument("--code", default=available_codes()[0] if available_codes() else "")
    k.add_argument("--snr", type=float, help="per-dimension SNR (default: from --beta)")
    k.add_argument("--beta", type=float, default=0.95)
    k.add_argument("--frames", type=int, default=10)
    k.add_argument("--llr-scale", type=float, default=1.0)
    k.add_argument("--max-iters", type=int, default=3000)
    k.add_argument("--adapt", action="store_true", help="puncture/shorten towards --beta")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out", help="ReconReport JSON")
    k.set_defaults(func=_cmd_reconcile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
