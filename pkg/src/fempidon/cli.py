"""Command-line entry point.

    fempidon <subcommand> [--config c.json] [--seed S] [--out PATH] [--threads N] ...

Exit status: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from .errors import ConfigError, FempidonError, NumericalError

log = logging.getLogger("fempidon")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="experiment configuration (JSON); defaults if omitted")
    p.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
    p.add_argument("--threads", type=int, help="worker/BLAS thread cap (env PIDN_THREADS)")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="fempidon", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")
    sub.required = True

    def add(name, help_, out_help):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--out", required=False, help=out_help)
        return p

    add("mesh", "sample a source and write its adaptive mesh", "output directory")
    add("solve-darcy", "mesh + Darcy solve for a sampled source", "output directory")
    add("solve-transport", "full FEM pipeline for a sampled source", "output directory")
    p = add("gen-data", "generate a training dataset", "dataset file (PIDS1)")
    p.add_argument("--n", type=int, help="number of instances (overrides data.N)")
    p = add("train", "train a model on a dataset", "output directory")
    p.add_argument("--data", help="dataset file (PIDS1)")
    p.add_argument("--iterations", type=int, help="iterations (overrides optimizer.iterations)")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p = add("eval", "evaluate a checkpoint against FEM references", "report directory")
    p.add_argument("--checkpoint", help="checkpoint file (PIDN1)")
    p.add_argument("--n-test", type=int, help="test cases (overrides evaluation.N_test)")
    p = add("ablate", "structured vs random residual sampling", "output directory")
    p.add_argument("--iterations", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--n-seeds", type=int, default=3, help="seeds seed, seed+1, ...")
    p = add("bench", "time model inference against the FEM transport solve", "output directory")
    p.add_argument("--checkpoint", help="checkpoint file (PIDN1)")
    p.add_argument("--n-test", type=int)
    p.add_argument("--repeats", type=int)
    return parser


def _require(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise UsageError(f"fempidon {args.command}: error: missing "
                         + ", ".join(f"--{n}" for n in missing))


def _load_config(args) -> config_mod.ExperimentConfig:
    if args.config is None:
        cfg = config_mod.ExperimentConfig()
    else:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        cfg = config_mod.load(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _threads(args, cfg):
    n = args.threads
    if n is None and os.environ.get("PIDN_THREADS"):
        try:
            n = int(os.environ["PIDN_THREADS"])
        except ValueError:
            raise UsageError("PIDN_THREADS must be an integer") from None
    if n is None:
        n = cfg.threads
    if n is not None and n < 1:
        raise UsageError("thread count must be positive")
    return n or (os.cpu_count() or 1)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sample_case(cfg, seed):
    from .fem_darcy import solve_darcy
    from .mesh import generate_mesh
    from .physics import sample_mixture
    phys = cfg.phys
    mix = sample_mixture(np.random.default_rng(seed), cfg.sampler, phys)
    mesh = generate_mesh(mix, cfg.size_field, phys)
    return phys, mix, mesh, solve_darcy


def cmd_mesh(args, cfg, threads):
    from .mesh import check_integrity
    phys, mix, mesh, _ = _sample_case(cfg, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    mesh.to_vtk(os.path.join(args.out, "mesh.vtk"), {"source": mix(*mesh.vertices.T)}, "mesh")
    _write_json(os.path.join(args.out, "mesh.json"), {
        "source": mix.to_json(), "n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles,
        "problems": check_integrity(mesh, phys.area)})
    log.info("mesh: %d vertices, %d triangles", mesh.n_vertices, mesh.n_triangles)


def cmd_solve_darcy(args, cfg, threads):
    phys, mix, mesh, solve_darcy = _sample_case(cfg, cfg.seed)
    sol = solve_darcy(mesh, phys, mix)
    os.makedirs(args.out, exist_ok=True)
    sol.to_vtk(os.path.join(args.out, "darcy.vtk"))
    sol.to_csv(os.path.join(args.out, "darcy.csv"))
    _write_json(os.path.join(args.out, "darcy.json"), {
        "source": mix.to_json(), "n_vertices": mesh.n_vertices,
        "pressure_integral": sol.pressure.integral(),
        "expected_pressure_integral": phys.beta1 / phys.alpha})


def cmd_solve_transport(args, cfg, threads):
    from .fem_transport import run_transport
    phys, mix, mesh, solve_darcy = _sample_case(cfg, cfg.seed)
    sol = solve_darcy(mesh, phys, mix)
    tcfg = cfg.transport_config
    series = run_transport(mesh, sol.velocity, mix, phys, tcfg)
    os.makedirs(args.out, exist_ok=True)
    series.export(args.out)
    mass = series.total_mass()
    _write_json(os.path.join(args.out, "transport.json"), {
        "source": mix.to_json(), "dt": tcfg.dt, "T": tcfg.T,
        "mass": [float(v) for v in mass], "expected_mass": [phys.beta2 * t for t in series.times]})


def cmd_gen_data(args, cfg, threads):
    from .pipeline.dataset import gen_dataset, write_dataset
    _require(args, "out")
    ds = gen_dataset(cfg, args.n, workers=threads, log=log.info)
    write_dataset(args.out, ds)
    log.info("wrote %d instances to %s (%d failed)", len(ds), args.out, len(ds.header["failed"]))


def cmd_train(args, cfg, threads):
    from .deeponet import checkpoint
    from .pipeline.dataset import read_dataset
    from .pipeline.training import save_history, train
    _require(args, "data", "out")
    if args.iterations is not None and args.iterations < 0:
        raise UsageError("--iterations must be non-negative")
    ds = read_dataset(args.data)
    state = None
    if args.checkpoint:
        state = checkpoint.load(args.checkpoint, schedule=cfg.schedule, adam=cfg.adam)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.bin")
    result = train(ds, cfg, args.iterations, state=state, checkpoint_path=ckpt, log=log.info)
    save_history(args.out, result.history)
    log.info("trained to step %d in %.1f s", result.state.step, result.seconds)


def _load_params(args, cfg):
    from .deeponet import checkpoint
    _require(args, "checkpoint")
    state = checkpoint.load(args.checkpoint)
    if state.params.arch != cfg.network:
        raise UsageError(f"checkpoint architecture {state.params.arch} does not match the "
                         f"configuration {cfg.network}")
    return state.params


def cmd_eval(args, cfg, threads):
    from .pipeline.evaluation import evaluate
    _require(args, "out")
    params = _load_params(args, cfg)
    rep = evaluate(params, cfg, args.n_test)
    rep.write(args.out)
    log.info("E_full = %.4f  E_T = %.4f", rep.E_full, rep.E_T)


def cmd_ablate(args, cfg, threads):
    from .pipeline.ablation import ablate_sampling
    _require(args, "out")
    results = [ablate_sampling(cfg, cfg.seed + k, args.iterations, args.n_test, threads, log.info)
               for k in range(args.n_seeds)]
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "ablation.json"), [r.to_dict() for r in results])


def cmd_bench(args, cfg, threads):
    from .pipeline.evaluation import bench
    _require(args, "out")
    params = _load_params(args, cfg)
    rep = bench(params, cfg, args.n_test, repeats=args.repeats)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "bench.json"), rep.to_dict())
    log.info("FEM %.4f s  model %.4f s  speed-up %.1fx", rep.fem_seconds, rep.model_seconds,
             rep.speedup)


COMMANDS = {
    "mesh": cmd_mesh, "solve-darcy": cmd_solve_darcy, "solve-transport": cmd_solve_transport,
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
    "bench": cmd_bench,
}
NEEDS_OUT = {"mesh", "solve-darcy", "solve-transport"}


def dispatch(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        cfg = _load_config(args)
        if args.print_config:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        if args.command in NEEDS_OUT:
            _require(args, "out")
        threads = _threads(args, cfg)
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:     # pragma: no cover
            threadpool_limits = None
        if threadpool_limits is not None:
            with threadpool_limits(threads):
                COMMANDS[args.command](args, cfg, threads)
        else:
            COMMANDS[args.command](args, cfg, threads)
        return EXIT_OK
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print("invalid configuration:\n  " + "\n  ".join(exc.problems), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FempidonError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
