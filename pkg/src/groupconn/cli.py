"""Command-line entry point.

Subcommands: ``generate`` (network/design artifacts), ``infer`` (one
pipeline end to end), ``sweep`` (experiment grids with resume), ``oracle``
(enumeration-oracle comparison on a small instance), and ``bounds``
(entropy-bound diagnostics). Exit codes: 0 success, 1 numerical failure,
2 usage or configuration error.

All output files embed the tool version, config hash, and root seed. The
metric columns of every CSV are deterministic for a given config and seed;
wall-clock columns are zero unless ``timing`` is enabled.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import derive_seed
from .config import ExperimentConfig, config_hash, load_config
from .entropy import (
    feasibility_box_a,
    feasibility_box_w,
    h2_grad,
    indep_bound_a,
    sc_lower_bound_w,
    strong_concavity_witness,
)
from .evaluate import (
    RESULT_COLUMNS,
    exact_marginals,
    roc_sweep,
    run_naive_trajectory,
    run_offline_trajectory,
    run_online_trajectory,
    sweep_runner,
)
from .likelihood import coeffs
from .online import OnlineConfig
from .simulate import (
    NoiseSpec,
    StimulationDesign,
    generate_bernoulli_design,
    generate_network,
    outcome_matrix,
    save_bundle_json,
    save_design_csv,
    save_network_csv,
    simulate_records,
)
from .solver import (
    InferenceConfig,
    NumericalFailure,
    fit_all_outputs,
    save_state,
)

OUT_DIR_ENV = "GROUPCONN_OUT_DIR"


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"version": __version__, "config_hash": config_hash(cfg), "seed": cfg.seed}


def _out_dir(cfg: ExperimentConfig) -> Path:
    path = cfg.out_dir or os.environ.get(OUT_DIR_ENV, ".")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows_csv(path: Path, columns: list[str], rows: list[dict], meta: dict) -> None:
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row.get(col, "") for col in columns])
    path.write_text(buf.getvalue())


def _write_resolved_config(cfg: ExperimentConfig, out: Path, extra: dict | None = None) -> None:
    payload = {"provenance": _provenance(cfg), "config": cfg.model_dump()}
    if extra:
        payload["derived"] = extra
    (out / "resolved_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _inference_config(cfg: ExperimentConfig) -> InferenceConfig:
    s = cfg.inference
    return InferenceConfig(
        entropy=s.entropy,
        sigma=s.sigma,
        mu=s.mu,
        optimizer=s.optimizer,
        dual_step=s.dual_step,
        beta1=s.beta1,
        beta2=s.beta2,
        max_iters=s.max_iters,
        convergence_tol=s.convergence_tol,
        threshold=s.threshold,
    )


def _online_config(cfg: ExperimentConfig) -> OnlineConfig:
    s = cfg.online
    return OnlineConfig(
        entropy=cfg.inference.entropy,
        sigma=cfg.inference.sigma,
        mu=cfg.inference.mu,
        dual_step=s.dual_step,
        steps_per_test=s.steps_per_test,
        tau=s.tau,
        threshold=cfg.inference.threshold,
        margin=s.margin,
        aggregate=s.aggregate,
    )


def _network(cfg: ExperimentConfig):
    net_seed = derive_seed(cfg.seed, "network-root")
    return generate_network(
        cfg.network.n,
        cfg.network.theta,
        allow_self=cfg.network.allow_self,
        seed=net_seed,
        k_override=cfg.network.k_override,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    meta = _provenance(cfg)
    net = _network(cfg)
    design = generate_bernoulli_design(
        cfg.network.n, cfg.design.s_mean, cfg.tests, seed=derive_seed(cfg.seed, "design-root")
    )
    save_network_csv(net, out / "network.csv", meta=meta)
    save_design_csv(design, out / "design.csv", meta=meta)
    save_bundle_json(
        out / "bundle.json",
        net=net,
        design=design,
        meta={**meta, "n": net.n, "theta": net.theta, "k": net.k},
    )
    _write_resolved_config(cfg, out)
    edges = int(net.adjacency.sum())
    print(f"network: n={net.n} edges={edges} density={net.density():.6f} "
          f"expected_in_degree={net.expected_in_degree:.3f}")
    print(f"design: tests={design.n_tests} mean_size={design.sizes.mean() if design.n_tests else 0:.2f}")
    print(f"wrote network.csv design.csv bundle.json in {out}")
    return 0


def cmd_infer(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    meta = _provenance(cfg)
    net = _network(cfg)
    noise_true = NoiseSpec(cfg.noise_true.alpha, cfg.noise_true.beta)
    assumed = cfg.resolved_noise_assumed()
    noise_assumed = NoiseSpec(assumed.alpha, assumed.beta)
    sim_seed = derive_seed(cfg.seed, "experiment")
    if cfg.mode == "offline":
        rows = run_offline_trajectory(
            net,
            noise_true,
            noise_assumed,
            _inference_config(cfg),
            s_mean=cfg.design.s_mean,
            budget=cfg.tests,
            checkpoints=cfg.checkpoints,
            seed=sim_seed,
            n_jobs=cfg.jobs,
            timing=cfg.timing,
        )
        # final full fit for the checkpoint and ROC artifacts
        design = generate_bernoulli_design(net.n, cfg.design.s_mean, cfg.tests, seed=sim_seed)
        outcomes = outcome_matrix(simulate_records(net, design, noise_true, seed=sim_seed))
        state = fit_all_outputs(design, outcomes, noise_assumed, _inference_config(cfg), n_jobs=cfg.jobs)
        save_state(
            state, out / "checkpoint.npz",
            config_hash=meta["config_hash"], version=meta["version"], seed=cfg.seed,
        )
        roc = roc_sweep(state.w, net.adjacency, np.linspace(0.0, 1.0, 21))
        roc_rows = [
            {"threshold": f"{thr:.6g}", "fpr": f"{fpr:.10g}", "sensitivity": f"{sens:.10g}"}
            for thr, fpr, sens in roc
        ]
        _write_rows_csv(out / "roc.csv", ["threshold", "fpr", "sensitivity"], roc_rows, meta)
    elif cfg.mode in ("online", "adaptive"):
        rows = run_online_trajectory(
            net,
            noise_true,
            noise_assumed,
            _online_config(cfg),
            design_kind="adaptive" if cfg.mode == "adaptive" else "bernoulli",
            s_mean=cfg.design.s_mean,
            budget=cfg.tests,
            seed=sim_seed,
            log_every=cfg.online.log_every,
            timing=cfg.timing,
        )
    elif cfg.mode == "naive":
        rows = run_naive_trajectory(
            net,
            noise_true,
            budget=cfg.tests,
            mode=cfg.naive.mode,
            init=cfg.naive.init,
            a=cfg.naive.a,
            b=cfg.naive.b,
            seed=sim_seed,
            log_every=cfg.online.log_every,
            timing=cfg.timing,
        )
    else:  # pragma: no cover - argparse restricts the choices
        raise ValueError(cfg.mode)
    # trajectory log schema: one row per logged test count
    columns = ["test_index", "design_kind", "stim_size", "spec", "sens", "wall_ms", "stopped_reason"]
    renamed = [
        {
            "test_index": r["test_count"],
            "design_kind": r["design"],
            "stim_size": r.get("stim_size", ""),
            "spec": r["specificity"],
            "sens": r["sensitivity"],
            "wall_ms": r["wall_ms"],
            "stopped_reason": r.get("stopped_reason", ""),
        }
        for r in _stringify(rows)
    ]
    _write_rows_csv(out / "trajectory.csv", columns, renamed, meta)
    like = coeffs(noise_assumed)
    _write_resolved_config(
        cfg, out, extra={"likelihood_coefficients": {"c_plus": like.c_plus, "c_minus": like.c_minus}}
    )
    if rows:
        last = rows[-1]
        print(f"{cfg.mode}: T={last['test_count']} specificity={last['specificity']:.4f} "
              f"sensitivity={last['sensitivity']:.4f}")
    print(f"wrote trajectory.csv in {out}")
    return 0


def _stringify(rows: list[dict]) -> list[dict]:
    out = []
    for row in rows:
        new = dict(row)
        for key in ("specificity", "sensitivity"):
            if key in new and isinstance(new[key], float):
                new[key] = f"{new[key]:.10g}"
        out.append(new)
    return out


def cmd_sweep(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    meta = _provenance(cfg)
    path = out / "results.csv"
    grid = cfg.sweep.grid
    seeds = cfg.sweep.seeds
    n_cells = 1
    for v in grid.values():
        n_cells *= len(v) if isinstance(v, list) else 1
    n_cells *= len(seeds)
    done_ids: set[str] = set()
    existing_text = ""
    if path.exists():
        existing_text = path.read_text()
        for line in existing_text.splitlines():
            if line.startswith("#") or line.startswith("config_id") or not line.strip():
                continue
            done_ids.add(next(csv.reader([line]))[0])

    def cell_id(idx: int) -> str:
        return f"{meta['config_hash']}-{idx:05d}"

    rows = sweep_runner(
        grid,
        seeds,
        cfg.tests,
        checkpoints=cfg.sweep.checkpoints or cfg.checkpoints,
        n_jobs=cfg.jobs,
        timing=cfg.timing,
        config_id_fn=cell_id,
        skip=lambda idx: cell_id(idx) in done_ids,
    )
    buf = io.StringIO()
    if existing_text:
        buf.write(existing_text)
    else:
        for key, value in meta.items():
            buf.write(f"# {key}: {value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
    writer = csv.writer(buf, lineterminator="\n")
    for row in _stringify(rows):
        writer.writerow([row.get(col, "") for col in RESULT_COLUMNS])
    path.write_text(buf.getvalue())
    _write_resolved_config(cfg, out)
    print(f"sweep: {n_cells} cells, {len(rows)} new rows -> {path}")
    return 0


def cmd_oracle(cfg: ExperimentConfig) -> int:
    """Compare the variational fit against the enumeration oracle."""
    from scipy.stats import spearmanr

    out = _out_dir(cfg)
    n = min(cfg.network.n, 10)
    net = generate_network(
        n, cfg.network.theta, seed=derive_seed(cfg.seed, "oracle-net"),
        k_override=cfg.network.k_override,
    )
    noise = NoiseSpec(cfg.noise_true.alpha, cfg.noise_true.beta)
    design = generate_bernoulli_design(
        n, min(cfg.design.s_mean, n), min(cfg.tests, 20), seed=derive_seed(cfg.seed, "oracle-design")
    )
    outcomes = outcome_matrix(simulate_records(net, design, noise, seed=derive_seed(cfg.seed, "oracle-sim")))
    inference = _inference_config(cfg)
    state = fit_all_outputs(design, outcomes, noise, inference)
    fit_w, exact_w = [], []
    for i in range(n):
        marg, _ = exact_marginals(design, outcomes[:, i], noise)
        exact_w.append(marg)
        fit_w.append(state.w[i])
    fit_w = np.concatenate(fit_w)
    exact_w = np.concatenate(exact_w)
    rho = float(spearmanr(fit_w, exact_w).statistic)
    agree = float(np.mean((fit_w >= inference.threshold) == (exact_w >= inference.threshold)))
    payload = {
        "provenance": _provenance(cfg),
        "n": n,
        "tests": design.n_tests,
        "spearman_rho": rho,
        "threshold_agreement": agree,
        "max_abs_deviation": float(np.abs(fit_w - exact_w).max()),
    }
    (out / "oracle.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"oracle: spearman={rho:.4f} agreement={agree:.4f} "
          f"max|fit-exact|={payload['max_abs_deviation']:.4f}")
    return 0


def cmd_bounds(cfg: ExperimentConfig) -> int:
    """Entropy-bound diagnostics over dense grids and random witnesses."""
    rng = np.random.default_rng(cfg.seed)
    grid = np.linspace(0.01, 0.99, 1000)
    margin_w = np.abs(h2_grad(grid)) - sc_lower_bound_w(grid)
    ok_w = bool((margin_w >= -1e-12).all())
    print(f"gradient-bound chain on w: min margin {margin_w.min():.3e} "
          f"{'PASS' if ok_w else 'FAIL'}")
    worst = np.inf
    for _ in range(1000):
        k = int(rng.integers(1, 6))
        w_stim = rng.uniform(0.05, 0.95, size=k)
        a = float(rng.uniform(0.01, 0.99))
        eps = float(np.prod(w_stim))
        worst = min(worst, indep_bound_a(a, w_stim) - 4.0 * abs(a - (1.0 - eps)))
    ok_a = worst >= -1e-12
    print(f"gradient-bound chain on a: min margin {worst:.3e} {'PASS' if ok_a else 'FAIL'}")
    min_eig = min(
        strong_concavity_witness(int(rng.integers(1, 9)), seed=int(rng.integers(2**31)))
        for _ in range(100)
    )
    ok_sc = min_eig >= 4.0 - 1e-6
    print(f"strong-concavity witness: min eigenvalue {min_eig:.6f} {'PASS' if ok_sc else 'FAIL'}")
    ok_box = True
    for trial in range(100):
        n = int(rng.integers(2, 9))
        t_count = int(rng.integers(1, 6))
        tests = []
        while len(tests) < t_count:
            mask = rng.random(n) < 0.5
            if mask.any():
                tests.append(np.flatnonzero(mask))
        design = StimulationDesign(n, tuple(tests))
        w = rng.uniform(0.05, 0.95, size=n)
        a = np.array([
            rng.uniform(w[s].max(), min(1.0, w[s].sum())) for s in design.tests
        ])
        for i in range(n):
            lo, hi = feasibility_box_w(i, w, a, design)
            ok_box &= lo <= hi + 1e-12
        for t in range(t_count):
            lo, hi = feasibility_box_a(t, w, design)
            ok_box &= lo <= hi + 1e-12
    print(f"feasibility boxes on satisfiable instances: {'PASS' if ok_box else 'FAIL'}")
    return 0 if (ok_w and ok_a and ok_sc and ok_box) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupconn",
        description="Sparse binary network recovery from noisy group tests",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate", "write network/design artifacts"),
        ("infer", "run one inference pipeline end to end"),
        ("sweep", "run an experiment grid (resumable)"),
        ("oracle", "compare the fit against the enumeration oracle"),
        ("bounds", "run entropy-bound diagnostics"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry (dotted path)",
        )
        p.add_argument("--out-dir", type=str, default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None, help="worker processes")
        if name == "infer":
            p.add_argument(
                "--mode",
                choices=["offline", "online", "adaptive", "naive"],
                default=None,
                help="pipeline to run (defaults to the config's mode)",
            )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        updates = {}
        if args.out_dir is not None:
            updates["out_dir"] = args.out_dir
        if args.jobs is not None:
            updates["jobs"] = args.jobs
        if getattr(args, "mode", None) is not None:
            updates["mode"] = args.mode
        if updates:
            cfg = cfg.model_copy(update=updates)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        command = {
            "generate": cmd_generate,
            "infer": cmd_infer,
            "sweep": cmd_sweep,
            "oracle": cmd_oracle,
            "bounds": cmd_bounds,
        }[args.command]
        return command(cfg)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
