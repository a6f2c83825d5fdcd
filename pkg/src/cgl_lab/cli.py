"""Command line driver: ``cgl-lab <subcommand> [--config PATH] [--seed N] [--out DIR] [--quiet]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import CglLabError, ConfigInvalid, NumericalFailure, ValidationError
from .io import write_csv, write_field, write_json

log = logging.getLogger("cgl_lab")

SUBCOMMANDS = ("saturate", "solve", "probe-limit", "steer", "gramian", "mix")


def _setup(cfg):
    from .dynamics import CglParams
    from .spectral import BumpProfile, make_grid, make_mask

    grid = make_grid(cfg.grid.d, cfg.grid.n)
    p = cfg.params
    params = CglParams(nu=p.nu, gamma=p.gamma, c=p.c, p=p.p, d=cfg.grid.d, s=p.s)
    m = cfg.mask
    mask = make_mask(grid, BumpProfile(kind=m.kind, plateau=tuple(tuple(x) for x in m.plateau),
                                       width=m.width, M=m.M))
    return grid, params, mask


def _freqs(lst, d):
    from .saturation import FrequencySet

    return FrequencySet.standard(d) if lst is None else FrequencySet([tuple(k) for k in lst], d)


def _report(out: Path, name: str, cfg, body: dict):
    write_json(out / name, {"config": cfg.normalized(), **body})


# ---------------------------------------------------------------------------
# subcommands


def cmd_saturate(cfg, out: Path):
    from .saturation import chain_linear, chain_nonlinear, is_generator, saturation_diagnostic

    grid, params, mask = _setup(cfg)
    sc = cfg.saturate
    I = _freqs(sc.I, cfg.grid.d)
    if sc.kind == "linear":
        chain = chain_linear(I, sc.j_max)
    else:
        chain = chain_nonlinear(I, sc.j_max, params.p)
    levels = [{"level": j, "count": len(lv), "frequencies": [list(k) for k in lv.sorted()]}
              for j, lv in enumerate(chain.levels)]
    body = {"generator": is_generator(I), "base": [list(k) for k in I.sorted()], "kind": sc.kind,
            "levels": levels, "monotone": chain.is_monotone()}
    if sc.diagnostic:
        rep = saturation_diagnostic(I, mask, sc.diagnostic_levels, kind=sc.kind, p=params.p)
        body["diagnostic"] = rep.to_dict()
    _report(out, "report.json", cfg, body)
    write_csv(out / "levels.csv", ["level", "count"], [(lv["level"], lv["count"]) for lv in levels])
    return body


def cmd_solve(cfg, out: Path):
    from .dynamics import ControlSegment, SolverOptions, solve

    grid, params, mask = _setup(cfg)
    sc = cfg.solve
    u0 = cfgmod.build_field(grid, sc.u0)
    control = cfgmod.build_field(grid, sc.control) if sc.control else None
    h = cfgmod.build_field(grid, sc.h) if sc.h else None
    opts = SolverOptions(**sc.solver.model_dump())
    dt = sc.T / sc.samples
    segs = [ControlSegment(dt, control, kind="free_run" if control is None else "control")
            for _ in range(sc.samples)]
    traj = solve(u0, segs, params, mask=mask, h=h, options=opts)
    rows = traj.norms(params)
    write_csv(out / "trajectory.csv", ["t", "l2", "hs", "lyapunov"], rows)
    write_field(out / "final.cglf", traj.final, params.s)
    body = {"T": sc.T, "final_l2": rows[-1][1], "final_hs": rows[-1][2], "final_lyapunov": rows[-1][3]}
    _report(out, "report.json", cfg, body)
    return body


def cmd_probe_limit(cfg, out: Path):
    from .dynamics import nonlinearity_B
    from .spectral import sobolev_norm
    from .synthesis import impulse_limit_probe

    grid, params, mask = _setup(cfg)
    pc = cfg.probe_limit
    u0 = cfgmod.build_field(grid, pc.u0)
    eta = cfgmod.build_field(grid, pc.eta)
    zeta = cfgmod.build_field(grid, pc.zeta)
    if pc.normalize:
        ne = sobolev_norm(mask.apply(eta), params.s)
        if ne > 0:
            eta = eta / ne
        nz = sobolev_norm(nonlinearity_B(zeta, params), params.s)
        if nz > 0:
            zeta = zeta / nz ** (1.0 / params.q)
    rows = impulse_limit_probe(u0, eta, zeta, pc.deltas, params, mask)
    errs = [r["error"] for r in rows]
    body = {"rows": rows, "decreasing": all(b < a for a, b in zip(errs, errs[1:]))}
    write_csv(out / "probe.csv", ["delta", "error", "relative"],
              [(r["delta"], r["error"], r["relative"]) for r in rows])
    _report(out, "report.json", cfg, body)
    return body


def cmd_steer(cfg, out: Path):
    from .spectral import constant_mask, sobolev_norm
    from .synthesis import indicator_errors, replay, steer_full, steer_indicator

    grid, params, mask = _setup(cfg)
    sc = cfg.steer
    I = _freqs(sc.I, cfg.grid.d)
    u0 = cfgmod.build_field(grid, sc.u0)
    u1 = cfgmod.build_field(grid, sc.u1)
    h = cfgmod.build_field(grid, sc.h) if sc.h else None
    if sc.mode == "indicator":
        ref = indicator_errors(u1.coeffs, u0, u1, mask)["target_norm"]
        eps = sc.eps if sc.eps is not None else sc.eps_relative * ref
        plan = steer_indicator(u0, u1, eps, sc.T, params, mask, h=h, I=I, N_max=sc.N_max)
        run_mask = mask
    else:
        eps = sc.eps if sc.eps is not None else sc.eps_relative * max(sobolev_norm(u1, params.s), 1e-300)
        run_mask = constant_mask(grid)
        plan = steer_full(u0, u1, eps, sc.T, params, h=h, I=I, N_max=sc.N_max, hold_chunk=sc.hold_chunk)
    traj = replay(plan, params, run_mask, h)
    write_json(out / "plan.json", plan.to_dict())
    write_csv(out / "trace.csv", ["t", "l2", "hs", "lyapunov"], traj.norms(params))
    write_field(out / "final.cglf", traj.final, params.s)
    replay_gap = float(np.max(np.abs(traj.final.coeffs - plan.final.coeffs))) if plan.final is not None else 0.0
    body = {"mode": sc.mode, "eps": eps, "duration": plan.duration, "errors": plan.errors,
            "info": plan.info, "n_segments": len(plan.segments), "replay_gap": replay_gap}
    _report(out, "report.json", cfg, body)
    return body


def cmd_gramian(cfg, out: Path):
    from .linearized import LinearizationContext, gramian
    from .spectral import constant_mask

    grid, params, mask = _setup(cfg)
    gc = cfg.gramian
    u0 = cfgmod.build_field(grid, gc.u0)
    h = cfgmod.build_field(grid, gc.h) if gc.h else None
    ctx = LinearizationContext.from_initial(u0, gc.T, gc.nsteps, params,
                                            mask if gc.localized else constant_mask(grid), h)
    H = _freqs(gc.H, cfg.grid.d)
    probe = [k for k in grid.mode_box() if all(abs(v) <= gc.probe_kmax for v in k)]
    from .saturation import canonical

    probe = sorted({canonical(k) for k in probe})
    rep = gramian(ctx, H, gc.n_time_slots, probe)
    write_csv(out / "singular_values.csv", ["index", "sigma"], list(enumerate(rep.singular_values.tolist())))
    body = rep.to_dict()
    _report(out, "report.json", cfg, body)
    return body


def cmd_mix(cfg, out: Path):
    from .haar import HaarNoiseSpec, ScalarLaw
    from .mixing import run_mixing

    grid, params, mask = _setup(cfg)
    mc, nc = cfg.mix, cfg.noise
    I = _freqs(nc.modes, cfg.grid.d)
    spec = HaarNoiseSpec(I, tuple(np.atleast_1d(nc.amps_cos)), tuple(np.atleast_1d(nc.amps_sin)), nc.decay,
                         ScalarLaw(nc.law, nc.radius), nc.j_max, nc.m_max)
    ua = cfgmod.build_field(grid, mc.u0_a)
    ub = cfgmod.build_field(grid, mc.u0_b)
    run = run_mixing(ua, ub, spec, params, mc.steps, mc.members, cfg.seed, mask if mc.localized else None,
                     stream=mc.stream, floor=mc.floor, burn_in=mc.burn_in)
    write_csv(out / "series.csv", ["k", "distance", "mean_H", "max_H"],
              [(r["k"], r["distance"], r["mean_H"], r["max_H"]) for r in run.rows])
    d = [r["distance"] for r in run.rows]
    body = {"fit": run.fit.to_dict() if run.fit else None, "lyapunov_bound": run.bound,
            "decrease_factor": d[0] / d[-1] if d[-1] > 0 else float("inf"), "provenance": run.provenance}
    _report(out, "report.json", cfg, body)
    return body


COMMANDS = {"saturate": cmd_saturate, "solve": cmd_solve, "probe-limit": cmd_probe_limit,
            "steer": cmd_steer, "gramian": cmd_gramian, "mix": cmd_mix}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgl-lab", description="CGL controllability and mixing experiments")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", type=Path, help="YAML experiment file (defaults apply if omitted)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", type=Path, help="output directory (overrides 'output')")
        sp.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.validate({})
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        out = Path(args.out) if args.out else Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        body = COMMANDS[args.command](cfg, out)
    except ConfigInvalid as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    except CglLabError as exc:  # pragma: no cover - every error derives from one of the above
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        summary = {k: v for k, v in body.items() if not isinstance(v, (list, dict))}
        print(f"{args.command}: wrote {out}" + (f" {summary}" if summary else ""))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
