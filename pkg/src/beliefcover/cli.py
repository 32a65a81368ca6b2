"""Config-driven command line.

Usage::

    beliefcover <command> --config run.json [--out DIR] [--workers N] [--seed-override S]

Every command writes its outputs plus ``manifest.json`` into the output
directory. The exit code is 0 only when every check in the run passed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import scipy
import sklearn

from . import __version__
from . import data as data_mod
from .diagnostics import LEMMAS, compare_coverage, verify_lemma, DEFAULT_TRIALS
from .errors import BadSpec, BeliefCoverError
from .experiments import (
    DS_SCALES,
    abstraction_error_experiment,
    covering_sweep,
    ds_bound_experiment,
    fdvf_experiment,
    forgetting_sweep,
)
from .generators import generate
from .model import load_model
from .policies import policy_from_spec
from .rng import substream

COMMANDS = ("gen-model", "gen-data", "estimate-ds", "estimate-fdvf", "diagnose-coverage", "verify-lemmas", "sweep")

_num = {"type": "number"}
_int = {"type": "integer"}
_pos = {"type": "integer", "minimum": 1}
_nums = {"type": "array", "items": _num}
_ints = {"type": "array", "items": _pos}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "path": {"type": "string"},
        "family": {"enum": ["random", "revealing", "counter-example", "low-rank", "fast-forgetting", "resetting", "chain"]},
        "n_states": _pos, "n_actions": _pos, "n_obs": _pos, "rank": _pos,
        "xi": _num, "gamma": _num, "horizon": _pos, "alpha": _num, "mixing": _num,
        "permute": {"type": "boolean"}, "reward": _num,
        "order": {"enum": ["predict-first", "update-first"]},
    },
}

POLICY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["uniform", "constant", "belief-linear", "memoryless", "window", "history"]},
        "dist": _nums,
        "K": {"type": "array", "items": _nums},
        "matrix": {"type": "array", "items": _nums},
        "min_prob": _num, "T": _pos, "depth": _pos,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _int,
        "workers": _pos,
        "tail_tol": _num,
        "out": {"type": "string"},
        "model": MODEL_SCHEMA,
        "policies": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"pi_e": POLICY_SCHEMA, "pi_b": POLICY_SCHEMA},
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["d1", "d2"]},
                "n": _pos, "max_depth": _pos, "H": _pos,
                "prefix_dist": {"enum": [data_mod.GEOMETRIC, data_mod.UNIFORM]},
                "mode": {"enum": [data_mod.INDEPENDENT, data_mod.SHARED]},
            },
        },
        "estimate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_grid": _ints, "seeds": _pos, "delta": _num, "depth": _pos,
                "eps": {"anyOf": [{"const": "balanced"}, _num]},
                "scales": _nums, "T": _pos, "c": _num,
                "L_Q": _num, "L_V": _num, "L_pi": _num, "J_true": _num,
            },
        },
        "coverage": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"T_grid": _ints, "depth": _pos, "instances": _pos},
        },
        "lemmas": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ids": {"type": "array", "items": {"type": "string"}},
                "trials": _pos, "tol": _num,
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["covering", "forgetting", "abstraction-error"]},
                "depths": _ints, "depth": _pos, "eps": _num, "eps_grid": _nums,
                "dist": _nums, "instances": _pos,
            },
        },
    },
}


# ------------------------------------------------------------------ helpers


def load_config(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BadSpec(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise BadSpec(f"config error at {where}: {exc.message}") from None


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _section(cfg, name):
    if name not in cfg:
        raise BadSpec(f"config needs a {name!r} section for this command")
    return cfg[name]


def build_model(spec, seed, tag=("model",)):
    if "path" in spec:
        if len(spec) > 1:
            raise BadSpec("model.path cannot be combined with generator parameters")
        return load_model(spec["path"])
    if "family" not in spec:
        raise BadSpec("model needs either 'path' or 'family'")
    return generate(spec, substream(seed, *tag))


def build_policy(cfg, name, model, seed):
    spec = cfg.get("policies", {}).get(name, {"kind": "uniform"})
    try:
        return policy_from_spec(spec, model, substream(seed, "policy", name))
    except (KeyError, ValueError) as exc:
        raise BadSpec(f"policy {name}: {exc}") from exc


def write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in cols})


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating, np.integer)):
        return repr(v.item())
    return "" if v is None else v


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return repr(o)


def _grid(est):
    grid = est.get("n_grid")
    if not grid:
        raise BadSpec("n_grid must list at least one sample size")
    return grid


# ------------------------------------------------------------------ commands


def cmd_gen_model(cfg, out, seed, workers):
    model = build_model(_section(cfg, "model"), seed)
    (out / "model.json").write_text(model.to_json() + "\n")
    return {"outputs": ["model.json"], "model_hash": model.hash()}


def cmd_gen_data(cfg, out, seed, workers):
    model = build_model(_section(cfg, "model"), seed)
    pi_b = build_policy(cfg, "pi_b", model, seed)
    spec = _section(cfg, "data")
    kind = spec.get("kind", "d1")
    n = spec.get("n", 1000)
    dseed = int(substream(seed, "data").integers(2**31 - 1))
    if kind == "d1":
        ds = data_mod.gen_d1(
            model, pi_b, n, dseed, spec.get("max_depth", 5),
            prefix_dist=spec.get("prefix_dist", data_mod.GEOMETRIC), mode=spec.get("mode", data_mod.INDEPENDENT),
        )
    else:
        H = spec.get("H", model.horizon)
        if H is None:
            raise BadSpec("d2 data needs data.H or a finite-horizon model")
        ds = data_mod.gen_d2(model, pi_b, n, H, dseed)
    data_mod.save(ds, out / "dataset")
    return {"outputs": ["dataset/data.jsonl", "dataset/meta.json"], "n": n, "kind": kind}


def cmd_estimate_ds(cfg, out, seed, workers):
    model = build_model(_section(cfg, "model"), seed)
    if model.horizon is not None:
        raise BadSpec("double sampling needs a discounted model")
    est = _section(cfg, "estimate")
    pi_e, pi_b = build_policy(cfg, "pi_e", model, seed), build_policy(cfg, "pi_b", model, seed)
    res = ds_bound_experiment(
        model, pi_e, pi_b,
        depth=est.get("depth", 5),
        n_grid=_grid(est),
        seeds=range(est.get("seeds", 5)),
        delta=est.get("delta", 0.1),
        eps=est.get("eps", "balanced"),
        scales=tuple(est.get("scales", DS_SCALES)),
        L_Q=est.get("L_Q"), L_V=est.get("L_V"), L_pi=est.get("L_pi"), J_true=est.get("J_true"),
        seed=seed, workers=workers, tail_tol=cfg.get("tail_tol", 1e-6),
    )
    write_csv(out / "estimates.csv", res.rows)
    write_json(out / "summary.json", res.summary)
    return {"outputs": ["estimates.csv", "summary.json"], "passed": res.passed,
            "failures": [] if res.passed else ["error exceeds bound or median error increased"]}


def cmd_estimate_fdvf(cfg, out, seed, workers):
    model = build_model(_section(cfg, "model"), seed)
    if model.horizon is None:
        raise BadSpec("the FDVF estimator needs a finite-horizon model")
    est = _section(cfg, "estimate")
    pi_e, pi_b = build_policy(cfg, "pi_e", model, seed), build_policy(cfg, "pi_b", model, seed)
    res = fdvf_experiment(
        model, pi_e, pi_b,
        n_grid=_grid(est),
        seeds=range(est.get("seeds", 5)),
        scales=tuple(est.get("scales", DS_SCALES)),
        T=est.get("T"), delta=est.get("delta", 0.1), c=est.get("c"),
        seed=seed, workers=workers,
    )
    write_csv(out / "estimates.csv", res.rows)
    write_json(out / "summary.json", res.summary)
    return {"outputs": ["estimates.csv", "summary.json"], "passed": res.passed,
            "failures": [] if res.passed else ["error exceeds bound or truncation mismatch"]}


def cmd_diagnose_coverage(cfg, out, seed, workers):
    spec = cfg.get("coverage", {})
    depth = spec.get("depth", 4)
    rows, failures = [], []
    for i in range(spec.get("instances", 1)):
        model = build_model(_section(cfg, "model"), seed, tag=("model", i) if i else ("model",))
        model = model.with_horizon(depth)
        pi_e = build_policy(cfg, "pi_e", model, seed + i)
        pi_b = build_policy(cfg, "pi_b", model, seed + i)
        for T in spec.get("T_grid", [1, 2]):
            rep = compare_coverage(model, pi_b, pi_e, T, depth, check=False)
            ok = rep.holds()
            if not ok and rep.regime == "one-hot":
                failures.append(f"instance {i}, T={T}: coarse coverage exceeds fine")
            rows.append({"instance_id": i, "seed": seed, "T": T, "depth": depth, "regime": rep.regime,
                         "linf_fine": rep.linf_fine, "linf_coarse": rep.linf_coarse,
                         "chi2_fine": rep.chi2_fine, "chi2_coarse": rep.chi2_coarse,
                         "chi2_div_fine": rep.chi2_fine - 1, "chi2_div_coarse": rep.chi2_coarse - 1,
                         "linf_target": rep.linf_target, "chi2_target": rep.chi2_target, "holds": ok})
    write_csv(out / "coverage.csv", rows)
    return {"outputs": ["coverage.csv"], "passed": not failures, "failures": failures}


def cmd_verify_lemmas(cfg, out, seed, workers):
    spec = cfg.get("lemmas", {})
    ids = spec.get("ids", list(LEMMAS))
    verdicts = []
    for lid in ids:
        trials = spec.get("trials", DEFAULT_TRIALS.get(lid, 1000))
        verdicts.append(verify_lemma(lid, trials=trials, seed=seed, tol=spec.get("tol", 1e-9)))
    payload = [json.loads(v.to_json()) for v in verdicts]
    write_json(out / "verdicts.json", payload)
    failures = [v.lemma_id for v in verdicts if not v.passed]
    return {"outputs": ["verdicts.json"], "verdicts": payload, "passed": not failures, "failures": failures}


def cmd_sweep(cfg, out, seed, workers):
    spec = _section(cfg, "sweep")
    kind = spec["kind"]
    rows, summaries = [], []
    for i in range(spec.get("instances", 1)):
        model = build_model(_section(cfg, "model"), seed, tag=("model", i) if i else ("model",))
        if kind == "covering":
            res = covering_sweep(model, spec.get("depths", [1, 2, 3, 4, 5]), spec.get("eps", 0.05))
        elif kind == "forgetting":
            grid = spec.get("eps_grid", list(np.geomspace(0.3, 1e-4, 12)))
            res = forgetting_sweep(model, grid, spec.get("depth", 8))
        else:
            dist = spec.get("dist", [1.0 / model.n_actions] * model.n_actions)
            res = abstraction_error_experiment(model, dist, spec.get("eps_grid", [0.05, 0.1, 0.2]), spec.get("depth", 6))
        rows += [{"instance_id": i, "seed": seed, **r} for r in res.rows]
        summaries.append({"instance_id": i, **res.summary})
    write_csv(out / f"sweep_{kind}.csv", rows)
    write_json(out / "summary.json", summaries)
    failures = [f"instance {s['instance_id']}" for s in summaries if not s.get("passed", True)]
    return {"outputs": [f"sweep_{kind}.csv", "summary.json"], "passed": not failures, "failures": failures}


HANDLERS = {
    "gen-model": cmd_gen_model,
    "gen-data": cmd_gen_data,
    "estimate-ds": cmd_estimate_ds,
    "estimate-fdvf": cmd_estimate_fdvf,
    "diagnose-coverage": cmd_diagnose_coverage,
    "verify-lemmas": cmd_verify_lemmas,
    "sweep": cmd_sweep,
}


def versions():
    return {
        "beliefcover": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def run(command, cfg, out, seed_override=None, workers=None):
    """Run one command; returns the manifest dict (also written to disk)."""
    validate_config(cfg)
    seed = cfg.get("seed", 0) if seed_override is None else seed_override
    workers = workers or cfg.get("workers", 1)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "config": cfg,
        "seed": seed,
        "versions": versions(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    try:
        result = HANDLERS[command](cfg, out, seed, workers)
        manifest.update(result)
        manifest.setdefault("passed", True)
        manifest.setdefault("failures", [])
    except BadSpec as exc:
        manifest.update(passed=False, error={"type": "BadSpec", "message": str(exc)}, failures=[str(exc)])
    except BeliefCoverError as exc:
        manifest.update(passed=False, error={"type": type(exc).__name__, "message": str(exc)}, failures=[str(exc)])
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    write_json(out / "manifest.json", manifest)
    return manifest


def main(argv=None):
    parser = argparse.ArgumentParser(prog="beliefcover", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--seed-override", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except BadSpec as exc:
        print(json.dumps({"passed": False, "error": {"type": "BadSpec", "message": str(exc)}}), file=sys.stderr)
        return 2
    out = args.out or cfg.get("out") or "out"
    manifest = run(args.command, cfg, out, args.seed_override, args.workers)
    if "error" in manifest:
        print(json.dumps({"passed": False, "error": manifest["error"]}), file=sys.stderr)
        return 2
    if not manifest["passed"]:
        print(json.dumps({"passed": False, "failures": manifest["failures"]}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
