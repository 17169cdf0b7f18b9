"""Command-line front ends.

``msc`` runs the sparse-coding benchmarks and one-shot solves; ``dlra``
fits the factorization models and the missing-row completion. Outputs
are CSV files plus a ``run_meta.txt`` with the resolved configuration.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .dlra import DlraModel, ModeDictionary, TunerConfig, ao_dlra, complete_missing_rows
from .experiments import MSC_SOLVERS, TEST_NAMES, default_config, run_experiment
from .fileio import (
    is_tensor_file,
    read_config,
    read_index_file,
    read_matrix_csv,
    read_tensor,
    write_matrix_csv,
)
from .linalg import normalize_columns, residual_cost


_INT_KEYS = {
    "n", "m", "m1", "m2", "d", "d2", "k", "k2", "r", "n_instances",
    "n_inits", "tau", "l_max", "ipalm_iters", "seed", "patch_h", "patch_w",
    "stop_max_iter",
}
_FLOAT_KEYS = {"snr_db", "cond_b", "mu", "missing_frac", "stop_rel_tol"}
_GRID_KEYS = {"snr_grid", "cond_grid", "k_grid", "d_grid", "alpha_grid"}
_PAIR_GRID_KEYS = {"nm_grid", "dk_grid"}


def _parse_config_file(path):
    raw = read_config(path)
    out = {}
    for key, value in raw.items():
        if key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        elif key in _GRID_KEYS:
            out[key] = tuple(float(tok) for tok in value.split(","))
        elif key in _PAIR_GRID_KEYS:
            # pairs written as 10x10,50x1000
            out[key] = tuple(
                tuple(int(side) for side in tok.split("x"))
                for tok in value.split(",")
            )
        elif key == "solvers":
            out[key] = tuple(tok.strip() for tok in value.split(","))
        elif key == "alpha":
            out[key] = value if value == "auto" else float(value)
        elif key == "test_name":
            continue
        else:
            raise ValueError(f"unknown config key {key!r}")
    if "k_grid" in out:
        out["k_grid"] = tuple(int(v) for v in out["k_grid"])
    if "d_grid" in out:
        out["d_grid"] = tuple(int(v) for v in out["d_grid"])
    return out


def _load_dictionary(path):
    return normalize_columns(read_matrix_csv(path))[0]


def msc_main(argv=None):
    parser = argparse.ArgumentParser(
        prog="msc",
        description="Sparse coding inside a low-rank model: benchmarks and solves.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_bench = sub.add_parser("bench", help="run a benchmark protocol")
    p_bench.add_argument("test_name", choices=TEST_NAMES)
    p_bench.add_argument("--config", type=Path, help="key=value config file")
    p_bench.add_argument("--out", type=Path, required=True)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--jobs", type=int, default=1)

    p_solve = sub.add_parser("solve", help="solve one problem from files")
    p_solve.add_argument("--data", type=Path, required=True)
    p_solve.add_argument("--dict", type=Path, required=True, dest="dict_path")
    p_solve.add_argument("--mixing", type=Path, required=True)
    p_solve.add_argument("--solver", choices=MSC_SOLVERS, required=True)
    p_solve.add_argument("--k", type=int, required=True)
    p_solve.add_argument("--alpha", type=float, default=1e-2)
    p_solve.add_argument("--out", type=Path, default=Path("."))

    args = parser.parse_args(argv)
    if args.command == "bench":
        overrides = _parse_config_file(args.config) if args.config else {}
        overrides["seed"] = args.seed
        config = default_config(args.test_name, **overrides)
        run_experiment(config, jobs=args.jobs, out_dir=args.out)
        print(f"wrote {args.out / 'results.csv'}")
        return 0

    Y = read_matrix_csv(args.data)
    D = _load_dictionary(args.dict_path)
    B = read_matrix_csv(args.mixing)
    from .experiments import _run_msc_solver

    rep = _run_msc_solver(args.solver, Y, D, B, args.k, args.alpha)
    args.out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(args.out / "codes.csv", rep.codes.values)
    res = residual_cost(Y, D, rep.codes, B)
    print(
        f"solver={args.solver} residual={res:.6g} iterations={rep.iterations} "
        f"termination={rep.termination} codes={args.out / 'codes.csv'}"
    )
    return 0


def _read_data_any(path):
    if is_tensor_file(path):
        return read_tensor(path)
    return read_matrix_csv(path)


def dlra_main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dlra",
        description="Dictionary-constrained low-rank approximation runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="fit one model")
    p_run.add_argument("--model", choices=("dmf", "dnmf", "dcpd", "nndcpd"),
                       required=True)
    p_run.add_argument("--data", type=Path, required=True)
    p_run.add_argument("--dict", type=Path, required=True, dest="dict_path")
    p_run.add_argument("--dict2", type=Path, default=None)
    p_run.add_argument("--rank", type=int, required=True)
    p_run.add_argument("--k", type=int, required=True)
    p_run.add_argument("--k2", type=int, default=None)
    p_run.add_argument("--alpha", type=float, default=1e-2)
    p_run.add_argument("--tau", type=int, default=20)
    p_run.add_argument("--iters", type=int, default=100)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", type=Path, required=True)

    p_comp = sub.add_parser("complete", help="reconstruct missing rows")
    p_comp.add_argument("--data", type=Path, required=True,
                        help="full-height matrix; masked rows are ignored")
    p_comp.add_argument("--mask", type=Path, required=True,
                        help="file of missing row indices")
    p_comp.add_argument("--dict", type=Path, required=True, dest="dict_path")
    p_comp.add_argument("--rank", type=int, required=True)
    p_comp.add_argument("--k", type=int, required=True)
    p_comp.add_argument("--alpha", type=float, default=5e-3)
    p_comp.add_argument("--tau", type=int, default=20)
    p_comp.add_argument("--iters", type=int, default=100)
    p_comp.add_argument("--inits", type=int, default=1)
    p_comp.add_argument("--seed", type=int, default=0)
    p_comp.add_argument("--out", type=Path, required=True)

    args = parser.parse_args(argv)
    if args.command == "run":
        return _dlra_run(args)
    return _dlra_complete(args)


def _dlra_run(args):
    data = _read_data_any(args.data)
    kind = {
        "dmf": "matrix_factorization",
        "dnmf": "nonneg_matrix_factorization",
        "dcpd": "cpd",
        "nndcpd": "nonneg_cpd",
    }[args.model]
    nonneg = kind.startswith("nonneg")
    D = _load_dictionary(args.dict_path)
    mode1 = None
    if args.dict2 is not None:
        if args.k2 is None:
            raise SystemExit("--dict2 requires --k2")
        mode1 = ModeDictionary(_load_dictionary(args.dict2), args.k2, nonneg=nonneg)
    model = DlraModel(kind, args.rank, ModeDictionary(D, args.k, nonneg=nonneg),
                      mode1)
    tuner = TunerConfig(alpha0=args.alpha, tau=args.tau)
    rep = ao_dlra(data, model, tuner, l_max=args.iters, seed=args.seed)

    args.out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(args.out / "codes.csv", rep.best_codes[0].values)
    write_matrix_csv(args.out / "factor_B.csv", rep.best_factors["B"])
    if "C" in rep.best_factors:
        write_matrix_csv(args.out / "factor_C.csv", rep.best_factors["C"])
    if 1 in rep.best_codes:
        write_matrix_csv(args.out / "codes_mode1.csv", rep.best_codes[1].values)
    with open(args.out / "run_meta.txt", "w") as fh:
        fh.write(f"model={args.model}\nrank={args.rank}\nk={args.k}\n")
        fh.write(f"alpha={args.alpha}\ntau={args.tau}\niters={args.iters}\n")
        fh.write(f"seed={args.seed}\nbest_cost={rep.best_cost:.12g}\n")
    print(f"best_cost={rep.best_cost:.6g} out={args.out}")
    return 0


def _dlra_complete(args):
    Y = read_matrix_csv(args.data)
    D = normalize_columns(read_matrix_csv(args.dict_path))[0]
    missing = read_index_file(args.mask)
    obs = np.setdiff1d(np.arange(Y.shape[0]), missing)
    Y_missing, rep = complete_missing_rows(
        Y[obs], D, missing, rank=args.rank, k=args.k, alpha=args.alpha,
        tau=args.tau, l_max=args.iters, n_inits=args.inits, seed=args.seed,
    )
    completed = Y.copy()
    completed[missing] = Y_missing
    args.out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(args.out / "completed.csv", completed)
    write_matrix_csv(args.out / "missing_rows.csv", Y_missing)
    with open(args.out / "run_meta.txt", "w") as fh:
        fh.write(f"rank={args.rank}\nk={args.k}\nalpha={args.alpha}\n")
        fh.write(f"tau={args.tau}\niters={args.iters}\ninits={args.inits}\n")
        fh.write(f"seed={args.seed}\ntrain_residual={rep.best_cost:.12g}\n")
    print(f"train_residual={rep.best_cost:.6g} out={args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(msc_main())
