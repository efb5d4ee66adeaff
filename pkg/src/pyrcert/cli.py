"""Command-line front end: certify, train, lambda-star, kr, hermite, sweep.

Configuration comes from a JSON file merged over built-in defaults; command
line flags win over the file.  Every command records the fully resolved
configuration into its output directory, and all randomness flows from the
single top-level seed.  Exit codes: 0 on success (certificate holds, run
finished), 2 on a domain failure (certificate refused, run diverged), 1 on
operational errors (missing files, bad config).
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from .activation import ActivationParams, as_function, evaluate
from .certificates import certificate_to_json, certify, monitor_invariants
from .gradients import TrainConfig, train, trainlog_summary, trainlog_to_csv
from .initializers import (
    InitConfig,
    init_certifiable,
    init_lecun,
    layer_rng,
    sphere_data,
    tune_gain,
)
from .lambda_star import (
    gram_hermite,
    gram_mc,
    hermite_coeffs,
    kr_min_singular,
    sigma_linear,
)
from .network import Dataset, Shape, dataset_from_csv, dataset_from_json
from .network import dataset_to_json as _dataset_to_json

_TARGET_STREAM = 104730
_FMT = ".17g"

DEFAULTS: dict = {
    "seed": 0,
    "out": None,
    "shape": {"d": 8, "widths": [16, 6, 4, 2]},
    "activation": {"gamma": 0.5, "beta": 1.0},
    "dataset": {
        "source": "sphere",  # "sphere" | "file"
        "n": 16,
        "radius": None,  # default sqrt(d)
        "targets": "aligned",  # "aligned" | "gaussian"
        "target_scale": 0.1,
        "x_csv": None,
        "y_csv": None,
        "bundle": None,
    },
    "init": {
        "scheme": "certifiable",
        "gain": 2.0,
        "second_layer_var": 0.0,
        "deep_style": "scaled_identity",
        "auto_gain": True,
    },
    "train": {"eta": None, "max_steps": 200_000, "stop_loss": 1e-10},
    "lambda_star": {
        "method": "both",  # "mc" | "hermite" | "both"
        "sigma": "smoothed",  # "smoothed" | "linear"
        "samples": 100_000,
        "r_max": 10,
        "quad_order": 200,
    },
    "kr": {"r": 2, "n": 30, "d": 40, "n_seeds": 100},
    "sweep": {"seeds": [0, 1, 2], "jobs": 1},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _load_config(path: str | None) -> dict:
    base = json.loads(json.dumps(DEFAULTS))  # deep copy: commands mutate their config
    if path is None:
        return base
    with open(path) as fh:
        user = json.load(fh)
    if not isinstance(user, dict):
        raise ValueError(f"config root must be a JSON object: {path}")
    return _merge(base, user)


def _resolve_out(cfg: dict, out_flag: str | None, command: str) -> Path:
    out = out_flag or cfg.get("out") or os.environ.get("PYRCERT_OUT") or "pyrcert_out"
    path = Path(out) / command if out_flag is None and cfg.get("out") is None else Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _record_config(cfg: dict, out_dir: Path) -> None:
    with open(out_dir / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2)


def _activation(cfg: dict) -> ActivationParams:
    a = cfg["activation"]
    return ActivationParams(float(a["gamma"]), float(a["beta"]))


def _first_layer_probe(shape: Shape, seed: int) -> np.ndarray:
    # both schemes draw the first layer as iid N(0, 1/d) from stream 1
    return layer_rng(seed, 1).normal(0.0, 1.0 / math.sqrt(shape.d), size=(shape.d, shape.widths[0]))


def _build_dataset(cfg: dict, shape: Shape, act: ActivationParams, seed: int) -> Dataset:
    ds = cfg["dataset"]
    if ds["source"] == "file":
        if ds.get("bundle"):
            return dataset_from_json(ds["bundle"])
        if not (ds.get("x_csv") and ds.get("y_csv")):
            raise ValueError("file dataset needs either 'bundle' or both 'x_csv' and 'y_csv'")
        return dataset_from_csv(ds["x_csv"], ds["y_csv"])
    if ds["source"] != "sphere":
        raise ValueError(f"unknown dataset source {ds['source']!r}")
    n = int(ds["n"])
    X = sphere_data(n, shape.d, radius=ds.get("radius"), seed=seed)
    n_out = shape.widths[-1]
    scale = float(ds.get("target_scale", 1.0))
    mode = ds.get("targets", "gaussian")
    if mode == "gaussian":
        G = layer_rng(seed, _TARGET_STREAM).normal(size=(n, n_out))
        Y = scale * G / np.linalg.norm(G)
    elif mode == "aligned":
        # targets along the dominant first-layer feature direction: keeps the
        # desk-scale certified run converging well inside the step budget
        w1 = _first_layer_probe(shape, seed)
        f1 = evaluate(act, X @ w1)
        u = np.linalg.svd(f1)[0][:, 0]
        Y = scale * np.outer(u, np.full(n_out, 1.0 / math.sqrt(n_out)))
    else:
        raise ValueError(f"unknown target mode {mode!r}")
    return Dataset(X, Y)


def _build_params_and_cert(cfg, shape, data, act, seed, need_cert, tune=None):
    init = cfg["init"]
    scheme = init["scheme"]
    if scheme == "lecun":
        params = init_lecun(shape, seed)
        cert = certify(params, data, act) if need_cert else None
        return params, cert
    icfg = InitConfig(
        scheme="certifiable",
        gain=float(init["gain"]),
        second_layer_var=float(init["second_layer_var"]),
        deep_style=init["deep_style"],
        seed=seed,
    )
    if tune is None:
        tune = need_cert
    if tune and init.get("auto_gain", True):
        try:
            _, params, cert = tune_gain(shape, data, act, icfg)
            return params, cert
        except RuntimeError:
            pass  # fall through and report the failing certificate as-is
    params = init_certifiable(shape, data, act, icfg)
    cert = certify(params, data, act) if need_cert else None
    return params, cert


def _echo_cert(cert) -> None:
    click.echo(f"lambda_F = {cert.lambda_f:.6g}   phi0 = {cert.phi0:.6g}")
    click.echo(
        f"init condition 1: {'holds' if cert.cond1_holds else 'FAILS'} "
        f"(slack {cert.cond1_slack:.6g})"
    )
    click.echo(
        f"init condition 2: {'holds' if cert.cond2_holds else 'FAILS'} "
        f"(slack {cert.cond2_slack:.6g})"
    )
    click.echo(
        f"alpha0 = {cert.alpha0:.6g}   Q0 = {cert.q0:.6g}   Q1 = {cert.q1:.6g}   "
        f"eta_max = {cert.eta_max:.6g}"
    )


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(1)


@click.group()
def main() -> None:
    """Convergence certificates for deep pyramidal networks."""


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Override the top-level seed.")
@click.option("--out", type=str, default=None, help="Output directory.")
def certify_cmd(config_path, seed, out) -> None:
    """Compute a convergence certificate and write certificate.json."""
    try:
        cfg = _load_config(config_path)
        if seed is not None:
            cfg["seed"] = seed
        run_seed = int(cfg["seed"])
        out_dir = _resolve_out(cfg, out, "certify")
        _record_config(cfg, out_dir)
        shape = Shape(d=int(cfg["shape"]["d"]), widths=tuple(cfg["shape"]["widths"]))
        act = _activation(cfg)
        data = _build_dataset(cfg, shape, act, run_seed)
        _dataset_to_json(data, out_dir / "dataset.json")
        _, cert = _build_params_and_cert(cfg, shape, data, act, run_seed, need_cert=True)
        certificate_to_json(cert, out_dir / "certificate.json")
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(exc)
    _echo_cert(cert)
    if cert.certified:
        click.echo(f"certificate holds; wrote {out_dir / 'certificate.json'}")
        sys.exit(0)
    if cert.degenerate_reason is not None:
        click.echo(f"certificate failed: lambda_F = 0 ({cert.degenerate_reason})", err=True)
    else:
        click.echo("certificate failed", err=True)
    sys.exit(2)


main.add_command(certify_cmd, name="certify")


@main.command()
@click.option("--config", "config_path", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default=None)
@click.option("--eta", type=float, default=None, help="Step size; omit to use the certified cap.")
@click.option("--max-steps", type=int, default=None)
@click.option("--stop-loss", type=float, default=None)
def train_cmd(config_path, seed, out, eta, max_steps, stop_loss) -> None:
    """Run full-batch gradient descent, logging loss, bound, and invariants."""
    try:
        cfg = _load_config(config_path)
        if seed is not None:
            cfg["seed"] = seed
        if eta is not None:
            cfg["train"]["eta"] = eta
        if max_steps is not None:
            cfg["train"]["max_steps"] = max_steps
        if stop_loss is not None:
            cfg["train"]["stop_loss"] = stop_loss
        out_dir = _resolve_out(cfg, out, "train")
        _record_config(cfg, out_dir)
        summary, code = _run_training(cfg, out_dir)
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(json.dumps(summary, indent=2))
    sys.exit(code)


main.add_command(train_cmd, name="train")


def _run_training(cfg: dict, out_dir: Path) -> tuple[dict, int]:
    """Shared train pipeline (also used by sweep workers)."""
    run_seed = int(cfg["seed"])
    shape = Shape(d=int(cfg["shape"]["d"]), widths=tuple(cfg["shape"]["widths"]))
    act = _activation(cfg)
    data = _build_dataset(cfg, shape, act, run_seed)
    tr = cfg["train"]
    eta = tr.get("eta")
    # gain auto-tuning only when the run needs the certified step size
    params, cert = _build_params_and_cert(
        cfg, shape, data, act, run_seed, need_cert=True, tune=eta is None
    )
    if cert is not None:
        certificate_to_json(cert, out_dir / "certificate.json")
    if eta is None:
        if cert is None or not cert.certified:
            raise RuntimeError(
                "no step size given and the certificate does not hold; pass --eta"
            )
        eta = 0.9 * cert.eta_max  # strict inequality against the certified cap
    eta = float(eta)
    use_cert = cert if (cert is not None and cert.certified and eta < cert.eta_max) else None
    tcfg = TrainConfig(
        eta=eta,
        max_steps=int(tr["max_steps"]),
        stop_loss=float(tr["stop_loss"]),
        monitor=frozenset({"spectra"}),
    )
    log = train(params, data, act, tcfg, cert=use_cert)
    trainlog_to_csv(log, out_dir / "trainlog.csv")
    summary = trainlog_summary(log)
    summary["seed"] = run_seed
    summary["certified"] = use_cert is not None
    if use_cert is not None:
        report = monitor_invariants(log, use_cert)
        summary["invariants_hold"] = report.all_hold
        summary["first_violation"] = report.first_violation
    return summary, (2 if log.diverged else 0)


@main.command(name="lambda-star")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--method", type=click.Choice(["mc", "hermite", "both"]), default=None)
@click.option("--sigma", type=click.Choice(["smoothed", "linear"]), default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--n", "--N", "n_samples", type=int, default=None, help="Number of data rows.")
@click.option("--d", type=int, default=None, help="Data dimension.")
@click.option("--samples", type=int, default=None, help="Monte Carlo sample count.")
@click.option("--r-max", type=int, default=None, help="Series truncation order.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default=None)
@click.option("--full-matrix", is_flag=True, help="Also write the Gram matrix as CSV.")
def lambda_star_cmd(
    config_path, method, sigma, gamma, beta, n_samples, d, samples, r_max, seed, out, full_matrix
) -> None:
    """Estimate the expected first-layer Gram matrix and its bottom eigenvalue."""
    try:
        cfg = _load_config(config_path)
        ls = cfg["lambda_star"]
        if method is not None:
            ls["method"] = method
        if sigma is not None:
            ls["sigma"] = sigma
        if samples is not None:
            ls["samples"] = samples
        if r_max is not None:
            ls["r_max"] = r_max
        if gamma is not None:
            cfg["activation"]["gamma"] = gamma
        if beta is not None:
            cfg["activation"]["beta"] = beta
        if n_samples is not None:
            cfg["dataset"]["n"] = n_samples
        if d is not None:
            cfg["shape"]["d"] = d
        if seed is not None:
            cfg["seed"] = seed
        run_seed = int(cfg["seed"])
        out_dir = _resolve_out(cfg, out, "lambda_star")
        _record_config(cfg, out_dir)

        dim = int(cfg["shape"]["d"])
        X = sphere_data(int(cfg["dataset"]["n"]), dim, radius=cfg["dataset"].get("radius"), seed=run_seed)
        if ls["sigma"] == "linear":
            sig = sigma_linear
        else:
            sig = as_function(_activation(cfg))
        payload: dict = {"sigma": getattr(sig, "label", "sigma"), "seed": run_seed}
        mc = herm = None
        if ls["method"] in ("mc", "both"):
            mc = gram_mc(X, sig, int(ls["samples"]), seed=run_seed)
            payload["monte_carlo"] = {
                "lambda_min": mc.lambda_min,
                "n_samples": mc.n_samples,
                "stderr_max": mc.stderr_max,
            }
        if ls["method"] in ("hermite", "both"):
            spec = hermite_coeffs(sig, int(ls["r_max"]), int(ls["quad_order"]))
            herm = gram_hermite(X, spec, int(ls["r_max"]))
            payload["hermite"] = {
                "lambda_min": herm.lambda_min,
                "r_max": herm.r_max,
                "tail_mass": herm.tail_mass,
            }
        if mc is not None and herm is not None:
            diff = float(np.max(np.abs(mc.gram - herm.gram)))
            payload["discrepancy"] = {
                "max_abs_entry_diff": diff,
                "allowance_5stderr_plus_tail": 5.0 * mc.stderr_max + herm.tail_mass,
            }
        with open(out_dir / "gram.json", "w") as fh:
            json.dump(payload, fh, indent=2)
        if full_matrix:
            source = mc if mc is not None else herm
            with open(out_dir / "gram.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([f"g{j}" for j in range(source.gram.shape[1])])
                for row in source.gram:
                    writer.writerow([format(v, _FMT) for v in row])
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(json.dumps(payload, indent=2))
    sys.exit(0)


@main.command(name="kr")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--n", "--N", "n_rows", type=int, default=None)
@click.option("--d", type=int, default=None)
@click.option("--r", type=int, default=None)
@click.option("--n-seeds", type=int, default=None)
@click.option("--seed", type=int, default=None, help="First seed of the sweep.")
@click.option("--out", type=str, default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
def kr_cmd(config_path, n_rows, d, r, n_seeds, seed, out, fmt) -> None:
    """Smallest singular values of Khatri-Rao powers over seeded sphere data."""
    try:
        cfg = _load_config(config_path)
        kr = cfg["kr"]
        if n_rows is not None:
            kr["n"] = n_rows
        if d is not None:
            kr["d"] = d
        if r is not None:
            kr["r"] = r
        if n_seeds is not None:
            kr["n_seeds"] = n_seeds
        if seed is not None:
            cfg["seed"] = seed
        out_dir = _resolve_out(cfg, out, "kr")
        _record_config(cfg, out_dir)
        base = int(cfg["seed"])
        dim, power = int(kr["d"]), int(kr["r"])
        threshold = dim ** (power / 2.0) / 2.0
        rows = []
        for s in range(base, base + int(kr["n_seeds"])):
            X = sphere_data(int(kr["n"]), dim, seed=s)
            exact, bound = kr_min_singular(X, power)
            rows.append((s, exact, bound, exact >= threshold))
        if fmt == "csv":
            with open(out_dir / "kr.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["seed", "sigma_min", "bound", "pass"])
                for s, exact, bound, ok in rows:
                    writer.writerow([s, format(exact, _FMT), format(bound, _FMT), int(ok)])
        else:
            payload = [
                {"seed": s, "sigma_min": exact, "bound": bound, "pass": bool(ok)}
                for s, exact, bound, ok in rows
            ]
            with open(out_dir / "kr.json", "w") as fh:
                json.dump(payload, fh, indent=2)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    n_pass = sum(1 for row in rows if row[3])
    click.echo(f"{'seed':>6} {'sigma_min':>14} {'bound':>14} pass")
    for s, exact, bound, ok in rows[:20]:
        click.echo(f"{s:>6} {exact:>14.6g} {bound:>14.6g} {int(ok)}")
    if len(rows) > 20:
        click.echo(f"... ({len(rows)} rows total)")
    click.echo(f"passes: {n_pass}/{len(rows)} at threshold d^(r/2)/2 = {threshold:.6g}")
    sys.exit(0)


@main.command(name="hermite")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--sigma", type=click.Choice(["smoothed", "linear"]), default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--r-max", type=int, default=None)
@click.option("--quad-order", type=int, default=None)
@click.option("--out", type=str, default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json")
def hermite_cmd(config_path, sigma, gamma, beta, r_max, quad_order, out, fmt) -> None:
    """Hermite coefficients of the configured activation."""
    try:
        cfg = _load_config(config_path)
        ls = cfg["lambda_star"]
        if sigma is not None:
            ls["sigma"] = sigma
        if gamma is not None:
            cfg["activation"]["gamma"] = gamma
        if beta is not None:
            cfg["activation"]["beta"] = beta
        if r_max is not None:
            ls["r_max"] = r_max
        if quad_order is not None:
            ls["quad_order"] = quad_order
        out_dir = _resolve_out(cfg, out, "hermite")
        _record_config(cfg, out_dir)
        sig = sigma_linear if ls["sigma"] == "linear" else as_function(_activation(cfg))
        spec = hermite_coeffs(sig, int(ls["r_max"]), int(ls["quad_order"]))
        payload = {
            "target": spec.target,
            "quad_order": spec.quad_order,
            "coeffs": spec.coeffs.tolist(),
            "converged": spec.converged.tolist(),
            "norm_sq": spec.norm_sq,
            "tail_mass": spec.tail_mass(spec.r_max),
        }
        with open(out_dir / "hermite.json", "w") as fh:
            json.dump(payload, fh, indent=2)
        if fmt == "csv":
            with open(out_dir / "hermite.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["r", "coeff", "converged"])
                for r, (mu, conv) in enumerate(zip(spec.coeffs, spec.converged)):
                    writer.writerow([r, format(mu, _FMT), int(conv)])
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(json.dumps(payload, indent=2))
    sys.exit(0)


def _sweep_entry(cfg_json: str, seed: int, out_str: str) -> dict:
    """One sweep run; top level so a process pool can pickle it."""
    cfg = json.loads(cfg_json)
    cfg["seed"] = seed
    out_dir = Path(out_str)
    out_dir.mkdir(parents=True, exist_ok=True)
    _record_config(cfg, out_dir)
    try:
        summary, code = _run_training(cfg, out_dir)
    except Exception as exc:  # noqa: BLE001 - recorded per entry
        return {"seed": seed, "error": str(exc), "exit_code": 1}
    summary["exit_code"] = code
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


@main.command(name="sweep")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, default=None)
@click.option("--jobs", type=int, default=None, help="Worker pool size.")
def sweep_cmd(config_path, out, jobs) -> None:
    """Run the train pipeline over a list of seeds and aggregate the outcomes."""
    try:
        cfg = _load_config(config_path)
        seeds = list(cfg["sweep"]["seeds"])
        if not seeds:
            raise ValueError("sweep.seeds must be non-empty")
        n_jobs = int(jobs if jobs is not None else cfg["sweep"].get("jobs", 1))
        out_dir = _resolve_out(cfg, out, "sweep")
        _record_config(cfg, out_dir)
        cfg_json = json.dumps(cfg)
        entries = [(cfg_json, int(s), str(out_dir / f"run_{s}")) for s in seeds]
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(_sweep_entry, *zip(*entries)))
        else:
            results = [_sweep_entry(*entry) for entry in entries]
        violations = 0
        for res in results:
            violations += sum(res.get("violations", {}).values())
        aggregate = {
            "n_runs": len(results),
            "total_violations": violations,
            "all_certified": all(res.get("certified", False) for res in results),
            "runs": results,
        }
        with open(out_dir / "aggregate.json", "w") as fh:
            json.dump(aggregate, fh, indent=2)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(json.dumps({k: aggregate[k] for k in ("n_runs", "total_violations", "all_certified")}, indent=2))
    sys.exit(2 if any(res.get("exit_code", 0) != 0 for res in results) else 0)


if __name__ == "__main__":  # pragma: no cover
    main()
