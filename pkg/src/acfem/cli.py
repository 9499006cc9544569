"""Command-line driver.

Subcommands:
    run --config FILE            solve + estimate, write report.csv/VTK/checkpoints
    estimate --dir DIR           re-run the estimator stack over checkpoints
    eigen --state FILE           eigenvalue samples of one checkpointed slab
    poisson-bench --levels N     spatial-estimator validation on -lap u = f

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 estimator failure.  ACFEM_OUTDIR overrides the configured output dir.
"""
import argparse
import os
import sys

import numpy as np

from acfem import checkpoint
from acfem.config import ConfigError, build_u0, parse_config, serialize_config
from acfem.estimators import (ConstantsConfig, compute_g_h, l1_term,
                              spatial_estimator, spatial_estimator_inf)
from acfem.fem import BoundField, FeFunction, FeSpace, norm_lp, phys_points, \
    write_vtk_with_fields
from acfem.linalg import SolverError, cg_solve
from acfem.mesh import Rect, build_macro_mesh, uniform_refine
from acfem.report import estimate_run, write_report_csv
from acfem.spectral import principal_eigenvalue
from acfem.stepper import (ModelParams, NewtonOptions, SlabFeedback,
                           StepFailure, TimePolicy, run_simulation)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ESTIMATOR = 4


def _out_dir(cfg):
    return os.environ.get("ACFEM_OUTDIR", cfg.out_dir)


def _params_from_config(cfg):
    return ModelParams(epsilon=cfg.epsilon, T=cfg.T, u0=build_u0(cfg),
                       f=cfg.f, domain=cfg.rect(), nonlinear=cfg.nonlinear)


def _print_footer(report):
    print("--- error-bound summary (heuristic-spectral) ---")
    print(f"eta_d            = {report.eta:.6e}")
    print(f"E_d              = {report.E_d:.6e}")
    print(f"B_bar            = {report.B_bar:.6e}")
    print(f"condition        : {report.condition_lhs:.6e} <= "
          f"{report.condition_rhs:.6e} -> "
          f"{'satisfied' if report.condition_satisfied else 'VIOLATED'}")
    suffix = "" if report.condition_satisfied else "  [unconditional-invalid]"
    print(f"L4(L4)   bound   = {report.bound_l4l4:.6e}{suffix}")
    print(f"L2(H1)   bound   = {report.bound_l2h1:.6e}{suffix}")
    print(f"Linf(L2) bound   = {report.bound_linfl2:.6e}{suffix}")


def cmd_run(args):
    try:
        with open(args.config) as f:
            cfg = parse_config(f.read())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    out = _out_dir(cfg)
    os.makedirs(out, exist_ok=True)
    ckpt_dir = os.path.join(out, "checkpoints")
    with open(os.path.join(out, "config.ini"), "w") as f:
        f.write(serialize_config(cfg))

    mesh = build_macro_mesh(cfg.rect(), (cfg.nx, cfg.ny))
    if cfg.refine:
        mesh = uniform_refine(mesh, cfg.refine)
    space = FeSpace(mesh)
    params = _params_from_config(cfg)
    constants = cfg.constants()
    policy = TimePolicy(k=cfg.k, adaptive=cfg.time_adaptive,
                        time_tol=cfg.time_tol, k_min=cfg.k_min,
                        k_max=cfg.k_max)

    seen = {}  # slab index -> (prev state, k); rejected retries overwrite

    def hook(slab):
        # slab outputs are written as each step completes, so a later
        # failure leaves every accepted slab on disk
        if cfg.write_checkpoints:
            checkpoint.write_slab(
                os.path.join(ckpt_dir, f"slab_{slab.n:04d}.txt"), slab)
        if cfg.write_vtk:
            write_vtk_with_fields(
                slab.cur.mesh, os.path.join(out, f"fields_{slab.n:04d}.vtk"),
                {"u": slab.cur})
        if not (cfg.space_adapt or cfg.time_adaptive):
            return None
        seen[slab.n] = (slab.prev, slab.k)
        earlier = seen.get(slab.n - 1)
        g = compute_g_h(slab, params)
        _, indicators = spatial_estimator(slab.cur, g, 2, constants)
        L1 = l1_term(slab, params,
                     prev_prev=earlier[0] if earlier else None,
                     k_prev=earlier[1] if earlier else None)
        return SlabFeedback(time_term=slab.k * L1,
                            indicators=indicators if cfg.space_adapt else None)

    from acfem.stepper import initial_state
    U0 = initial_state(params, space)
    if cfg.write_checkpoints:
        os.makedirs(ckpt_dir, exist_ok=True)
        checkpoint.write_initial(os.path.join(ckpt_dir, "slab_0000.txt"), U0)
    if cfg.write_vtk:
        write_vtk_with_fields(U0.mesh, os.path.join(out, "fields_0000.vtk"),
                              {"u": U0})
    try:
        slabs = run_simulation(params, space, policy,
                               newton=NewtonOptions(tol=cfg.newton_tol),
                               on_slab=hook, adapt_space=cfg.space_adapt,
                               theta_mark=cfg.theta)
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    finally:
        # the forest (including any splits from adaptivity) makes the slab
        # files decodable; written even when a step failed
        if cfg.write_checkpoints:
            checkpoint.write_forest(mesh.forest,
                                    os.path.join(ckpt_dir, "forest.txt"))

    try:
        report = estimate_run(U0, slabs, params, constants=constants, d=cfg.d)
    except SolverError as exc:
        print(f"estimator failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    write_report_csv(report, os.path.join(out, "report.csv"))
    _print_footer(report)
    return EXIT_OK


def cmd_estimate(args):
    run_dir = args.dir
    config_path = os.path.join(run_dir, "config.ini")
    try:
        with open(config_path) as f:
            cfg = parse_config(f.read())
    except OSError as exc:
        print(f"cannot read {config_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    constants = cfg.constants()
    if args.constants:
        try:
            with open(args.constants) as f:
                override = parse_config(f.read())
            constants = override.constants()
        except (OSError, ConfigError) as exc:
            print(f"cannot read constants override: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    try:
        U0, slabs = checkpoint.load_run(os.path.join(run_dir, "checkpoints"))
    except checkpoint.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR

    params = _params_from_config(cfg)
    try:
        report = estimate_run(U0, slabs, params, constants=constants, d=cfg.d)
    except SolverError as exc:
        print(f"estimator failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    out_path = args.out or os.path.join(run_dir, "report.csv")
    write_report_csv(report, out_path)
    _print_footer(report)
    return EXIT_OK


def cmd_eigen(args):
    state_path = args.state
    directory = os.path.dirname(os.path.abspath(state_path))
    try:
        forest = checkpoint.replay_forest(os.path.join(directory, "forest.txt"))
    except (OSError, checkpoint.CheckpointError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    epsilon = args.epsilon
    if epsilon is None:
        config_path = os.path.join(os.path.dirname(directory), "config.ini")
        try:
            with open(config_path) as f:
                epsilon = parse_config(f.read()).epsilon
        except (OSError, ConfigError):
            print("epsilon not given and no readable config.ini found",
                  file=sys.stderr)
            return EXIT_CONFIG
    cache = checkpoint.SpaceCache(forest)
    try:
        loaded = checkpoint.read_slab(state_path, cache)
    except (OSError, checkpoint.CheckpointError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    states = ([(0.0, loaded)] if isinstance(loaded, FeFunction)
              else [(loaded.t_prev, loaded.prev), (loaded.t_cur, loaded.cur)])
    target = open(args.out, "w") if args.out else sys.stdout
    try:
        target.write("t,lambda_h,Lambda_h,residual\n")
        for t, U in states:
            try:
                s = principal_eigenvalue(U, epsilon, safety=args.safety, t=t)
            except SolverError as exc:
                print(f"estimator failure: {exc}", file=sys.stderr)
                return EXIT_ESTIMATOR
            target.write(f"{t!r},{s.lambda_h!r},{s.Lambda_h!r},{s.residual!r}\n")
    finally:
        if args.out:
            target.close()
    return EXIT_OK


def poisson_benchmark(levels, constants=None, base=8):
    """Solve -lap u = f with u = sin(pi x) sin(pi y) on nested meshes.

    Returns a list of per-level dicts: ndof, h, true L2 error, the duality
    L2 estimator, the pointwise estimator, and the effectivity index.
    """
    if constants is None:
        constants = ConstantsConfig()  # all ones: the documented default
    rows = []
    exact = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    forcing = lambda x, y: 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    for lvl in range(levels):
        n = base * 2 ** lvl
        mesh = build_macro_mesh(Rect(0.0, 0.0, 1.0, 1.0), (n, n))
        space = FeSpace(mesh)
        from acfem.fem import load_vector
        U = FeFunction(space, cg_solve(space.stiffness(),
                                       load_vector(space, forcing), tol=1e-12))

        class _Err:
            def __init__(self):
                self.mesh = mesh

            def eval(self, cells, bary):
                pts = phys_points(mesh, cells, bary)
                return U.eval(cells, bary) - exact(pts[..., 0], pts[..., 1])

        err = norm_lp(_Err(), mesh, 2)
        g = BoundField(mesh, forcing)
        E2, _ = spatial_estimator(U, g, 2, constants)
        Einf = spatial_estimator_inf(U, g, constants)
        rows.append({"level": lvl, "ndof": space.ndof,
                     "h": float(mesh.diameters().max()), "error_l2": err,
                     "estimator_l2": E2, "estimator_inf": Einf,
                     "effectivity": E2 / err if err else np.inf})
    for i in range(1, len(rows)):
        rows[i]["rate_l2"] = float(np.log2(rows[i - 1]["error_l2"]
                                           / rows[i]["error_l2"]))
    return rows


def cmd_poisson_bench(args):
    constants = ConstantsConfig(c_omega=args.c_omega)
    try:
        rows = poisson_benchmark(args.levels, constants=constants)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    cols = ["level", "ndof", "h", "error_l2", "estimator_l2",
            "estimator_inf", "effectivity", "rate_l2"]
    print(",".join(cols))
    for row in rows:
        print(",".join(repr(float(row[c])) if isinstance(row.get(c), float)
                       else str(row.get(c, "")) for c in cols))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acfem",
        description="Allen-Cahn adaptive FEM with a posteriori error bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="solve and estimate")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(func=cmd_run)

    p_est = sub.add_parser("estimate", help="re-estimate from checkpoints")
    p_est.add_argument("--dir", required=True)
    p_est.add_argument("--constants", default=None,
                       help="config file whose [constants] section overrides")
    p_est.add_argument("--out", default=None)
    p_est.set_defaults(func=cmd_estimate)

    p_eig = sub.add_parser("eigen", help="eigenvalue samples of a checkpoint")
    p_eig.add_argument("--state", required=True)
    p_eig.add_argument("--epsilon", type=float, default=None)
    p_eig.add_argument("--safety", type=float, default=0.05)
    p_eig.add_argument("--out", default=None)
    p_eig.set_defaults(func=cmd_eigen)

    p_pb = sub.add_parser("poisson-bench", help="spatial estimator benchmark")
    p_pb.add_argument("--levels", type=int, default=4)
    p_pb.add_argument("--c-omega", type=float, default=1.0)
    p_pb.set_defaults(func=cmd_poisson_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
