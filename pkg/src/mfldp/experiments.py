"""Run a validated experiment config and write its report bundle."""
from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_model, config_hash, n_list
from .errors import ConfigError, NumericalFailure
from .free_energy import fixed_point, free_energy, minimize, spin_measure
from .gibbs import (LangevinConfig, log_partition_estimate, log_partition_exact, sample_mcmc,
                    simulate_sde)
from .harness import (TypeEvent, convergence_report, estimate_rate, exact_rate_report,
                      grid_gaussian_target, method_of_types_envelope, sanov_exact_check,
                      verify_inequalities)
from .reporting import (svg_line_plot, write_csv, write_json, write_samples_binary,
                        write_samples_csv)
from .spaces import measure_from_json, space_from_json
from .wasserstein import wasserstein_1d, wasserstein_exact


class NonConverged(NumericalFailure):
    """Fixed-point iteration stopped at max_iter (fatal only in strict mode)."""


class Bundle:
    """Collects output files and the JSON manifest for one experiment."""

    def __init__(self, cfg: dict, out: Path, seed: int):
        self.cfg, self.out, self.seed = cfg, Path(out), seed
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.report = {}

    def csv(self, name, columns, rows):
        self.files.append(write_csv(self.out / name, columns, rows).name)

    def svg(self, name, series, **kw):
        self.files.append(svg_line_plot(self.out / name, series, **kw).name)

    def finish(self) -> dict:
        manifest = {
            "kind": self.cfg["kind"],
            "config": self.cfg,
            "config_hash": config_hash(self.cfg),
            "seed": self.seed,
            "version": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "files": sorted(self.files),
            "report": self.report,
        }
        write_json(self.out / "manifest.json", manifest)
        return manifest


def _event(cfg: dict, model) -> TypeEvent:
    ecfg = cfg.get("rate", {}).get("event", {"type": "whole"})
    kind = ecfg["type"]
    if kind == "whole":
        return TypeEvent.whole()
    if "threshold" not in ecfg:
        raise ConfigError("missing required field 'threshold'", ["rate", "event"])
    if kind == "magnetization_at_least":
        return TypeEvent.magnetization_at_least(model.space, ecfg["threshold"])
    index = ecfg.get("index", 0)
    if index >= model.space.size:
        raise ConfigError("index outside the state space", ["rate", "event", "index"])
    if kind == "mass_at_most":
        return TypeEvent.mass_at_most(index, ecfg["threshold"])
    return TypeEvent.mass_at_least(index, ecfg["threshold"])


def _run_sample(cfg, b: Bundle, model, trace):
    s = cfg.get("sampler", {})
    n = n_list(cfg, 100)[0]
    if s.get("dynamics", "metropolis") == "langevin":
        lc = LangevinConfig(s.get("dt", 1e-3), s.get("horizon", 50.0))
        traj = simulate_sde(model, n, lc, seed=b.seed, force=s.get("force", False))
        frames = traj.configurations
        b.report = {"dynamics": "langevin", "dt": lc.dt, "horizon": lc.horizon,
                    "frames": int(len(frames))}
        b.csv("times.csv", ["t"], [[t] for t in traj.times])
    else:
        res = sample_mcmc(model, n, s.get("steps", 100 * n), s.get("burn_in", 10 * n),
                          s.get("thinning", n), s.get("sigma", 0.5), seed=b.seed)
        frames = res.samples
        if model.space.kind == "finite":
            frames = np.asarray(model.space.labels)[frames]
        b.report = {"dynamics": "metropolis", **res.report()}
        b.csv("interaction.csv", ["sample", "sum_U"],
              [[i, v] for i, v in enumerate(res.interaction_sum())])
    if s.get("format", "csv") == "binary":
        b.files.append(write_samples_binary(b.out / "samples.mfld", frames).name)
    else:
        b.files.append(write_samples_csv(b.out / "samples.csv", frames).name)


def _atoms_rows(model, nu):
    if model.space.kind == "finite":
        return [[model.space.labels[i], w] for i, w in zip(nu.support, nu.weights)]
    return [[*p, w] for p, w in zip(nu.support.tolist(), nu.weights)]


def _atom_columns(model):
    if model.space.kind == "finite":
        return ["label", "weight"]
    return [f"x{i}" for i in range(model.space.dim)] + ["weight"]


def _run_minimize(cfg, b: Bundle, model, trace):
    sv = cfg.get("solver", {})
    res = minimize(model, sv.get("method", "auto"), sv.get("mesh", 1e-3), seed=b.seed,
                   damping=sv.get("damping", 0.5), tol=sv.get("tol", 1e-8),
                   max_iter=sv.get("max_iter", 10_000))
    b.report = res.to_json(trace)
    b.report["breakdown"] = free_energy(model, res.nu).with_rate(res.inf_value).to_json()
    b.csv("minimizer.csv", _atom_columns(model), _atoms_rows(model, res.nu))
    if cfg.get("strict") and not res.converged:
        raise NonConverged("minimizer search did not converge")


def _run_fixed_point(cfg, b: Bundle, model, trace):
    sv = cfg.get("solver", {})
    if "start_magnetization" in sv:
        nu0 = spin_measure(model, sv["start_magnetization"])
    else:
        nu0 = model.alpha
    res = fixed_point(model, nu0, sv.get("damping", 0.5), sv.get("tol", 1e-8),
                      sv.get("max_iter", 10_000))
    b.report = res.to_json(trace)
    b.csv("fixed_point.csv", _atom_columns(model), _atoms_rows(model, res.nu))
    b.csv("residuals.csv", ["iteration", "w1_step"],
          [[i + 1, r] for i, r in enumerate(res.residuals)])
    if not res.converged and cfg.get("strict"):
        raise NonConverged(f"fixed point not reached in {res.iterations} iterations")


def _run_rate(cfg, b: Bundle, model, trace):
    rc = cfg.get("rate", {})
    ns = n_list(cfg, [10, 20, 50, 100])
    event = _event(cfg, model)
    mode = rc.get("mode", "exact" if model.space.kind == "finite" else "monte-carlo")
    if mode == "exact":
        if model.space.kind != "finite":
            raise ConfigError("exact rates need a finite space", ["rate", "mode"])
        if not model.interactions:
            rep = sanov_exact_check(model.alpha, ns, event)
        else:
            rep = exact_rate_report(model, ns, event)
    else:
        rep = estimate_rate(model, event, ns, rc.get("replicas", 1000), b.seed,
                            rc.get("chains", 10), rc.get("burn_in_sweeps", 20))
    b.report = rep.to_json()
    b.csv("rate.csv", rep.columns(), rep.table())
    series = {"(1/n) log P": ([r.n for r in rep.rows], [r.value for r in rep.rows])}
    if rep.rows and rep.rows[0].target is not None:
        series["target"] = ([r.n for r in rep.rows], [r.target for r in rep.rows])
    b.svg("rate.svg", series, title="rate", xlabel="n", ylabel="(1/n) log P", logx=True)


def _run_zn(cfg, b: Bundle, model, trace):
    zc = cfg.get("zn", {})
    ns = n_list(cfg, [50, 100, 200, 400, 800, 1600])
    method = zc.get("method", "exact")
    target = -minimize(model).inf_value
    rows = []
    for n in ns:
        if method == "exact":
            v, se = log_partition_exact(model, n), 0.0
        else:
            pts = zc.get("schedule_points", 21)
            est = log_partition_estimate(model, n, np.linspace(0, 1, pts),
                                         zc.get("replicas", 4), b.seed,
                                         zc.get("sweeps", 200), zc.get("burn_in_sweeps", 50))
            v, se = est.value, est.stderr
        gap = v - target
        env = method_of_types_envelope(model.space.size, n) if model.space.kind == "finite" \
            else None
        rows.append([n, v, se, target, gap, env])
    cols = ["n", "log_Zn_over_n", "stderr", "target", "gap", "envelope"]
    b.report = {"method": method, "columns": cols, "rows": rows}
    b.csv("zn.csv", cols, rows)


def _run_verify(cfg, b: Bundle, model, trace):
    vc = cfg.get("verify", {})
    suites = verify_inequalities(vc.get("instances", 100), b.seed, vc.get("max_states", 3),
                                 vc.get("max_n", 5))
    rows = [[s.name, s.instances, s.violations, s.slack_min, s.slack_median,
             "pass" if s.passed else "fail"] for s in suites]
    cols = ["suite", "instances", "violations", "slack_min", "slack_median", "status"]
    b.csv("verify.csv", cols, rows)
    b.report = {"columns": cols, "rows": rows,
                "failures": {s.name: s.failures for s in suites if s.failures}}


def _run_converge(cfg, b: Bundle, model, trace):
    cc = cfg.get("converge", {})
    ns = n_list(cfg, [100, 1000])
    targets = None
    if cc.get("target") == "gaussian-grid":
        targets = [grid_gaussian_target(model)]
    rep = convergence_report(model, ns, cc.get("replicas", 20), b.seed, cc.get("p", 1.0),
                             targets, cc.get("burn_in_sweeps", 20))
    b.report = rep.to_json()
    b.csv("converge.csv", rep.columns(), rep.table())
    b.svg("converge.svg", {"mean W_p": ([r.n for r in rep.rows], [r.mean for r in rep.rows])},
          title="W_p(L_n, target)", xlabel="n", ylabel="distance", logx=True)


def _load_measure(path: Path):
    obj = json.loads(path.read_text())
    space = space_from_json(obj["space"])
    return measure_from_json(space, obj)


def _run_wasserstein(cfg, b: Bundle, base: Path, trace):
    wc = cfg["wasserstein"]
    paths = [Path(wc[k]) if Path(wc[k]).is_absolute() else base / wc[k] for k in ("mu", "nu")]
    try:
        mu, nu = (_load_measure(p) for p in paths)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read measure: {exc}", ["wasserstein"]) from None
    p = wc.get("p", 1.0)
    method = wc.get("method", "auto")
    if method == "quantile":
        value, plan = wasserstein_1d(mu, nu, p), None
    else:
        value, plan = wasserstein_exact(mu, nu, p)
    b.report = {"p": p, "value": value, "method": method}
    b.csv("wasserstein.csv", ["p", "value"], [[p, value]])
    if plan is not None and wc.get("plan", False):
        b.csv("plan.csv", ["i", "j", "xi"],
              [[int(i), int(j), x] for i, j, x in plan.triples()])


RUNNERS = {"sample": _run_sample, "minimize": _run_minimize, "fixed-point": _run_fixed_point,
           "rate": _run_rate, "zn": _run_zn, "verify": _run_verify, "converge": _run_converge}


def run_experiment(cfg: dict, out=None, seed=None, trace: bool = False, base=".") -> dict:
    """Execute ``cfg`` and write CSV tables, SVG plots and manifest.json into ``out``."""
    seed = cfg.get("seed", 0) if seed is None else seed
    out = Path(out or cfg.get("out", f"mfldp-{cfg['kind']}"))
    b = Bundle(cfg, out, seed)
    if cfg["kind"] == "wasserstein":
        _run_wasserstein(cfg, b, Path(base), trace)
    else:
        model = build_model(cfg["model"]) if "model" in cfg else None
        RUNNERS[cfg["kind"]](cfg, b, model, trace)
    return b.finish()
