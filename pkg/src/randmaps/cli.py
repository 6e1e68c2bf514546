"""Declarative experiment runner.

A run is one YAML config describing an experiment kind, the system it acts
on, every numeric parameter, and the master seed. The schema is strict:
unknown fields and missing required fields are rejected with the dotted
path of the offending entry before any computation starts, because a
silently defaulted parameter would corrupt cross-run comparisons.

``run`` writes three files per experiment under ``--out``: a JSON report
carrying the config echo and every numeric result, a CSV table of the
per-row numbers ('.' decimal separator, LF line endings, header row), and
a PNG diagnostic figure. ``replay`` re-executes a report's embedded config
and compares the fresh results tree bit-for-bit against the stored one,
naming the first field that differs. Exit codes: 0 when every verdict
passes, 2 when the run succeeded but a verdict failed (or a replay found a
mismatch), 1 on any error.

Worker counts are a scheduling hint only; every estimator draws from
counter-based streams keyed by the master seed, so reports are identical
across worker counts.
"""

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, plotting
from .cocycles import Cocycle, furstenberg_estimate, lyapunov_spectrum
from .errors import ConfigInvalid, RandmapsError, ReportUnreadable
from .exponents import mostly_contracting_certificate, synchronization_test
from .kingman import build_additive, builtin_chain, verify_uniform_kingman
from .koopman import (
    discretize,
    empirical_basins,
    law_convergence_test,
    make_grid,
    stationary_report,
)
from .limits import clt_test, collect_sn, large_deviation_fit
from .spaces import Projective
from .sweeps import circle_exponent_sweep, lambda1_sweep, stationary_stability_sweep
from .systems import (
    RandomMapSystem,
    affine_interval,
    circle_wave,
    projective_of_matrix,
)

_BUILTIN_CHAINS = ("identity", "uniform", "absorbing")
_GRID_TOL = 1e-10
_WEIGHT_TOL = 1e-12


# ---------------------------------------------------------------- schema


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _section(node, path, required, optional=()):
    """Reject non-mapping nodes, unknown keys, and missing required keys."""
    if not isinstance(node, dict):
        raise ConfigInvalid(path or "config", "must be a mapping")
    allowed = set(required) | set(optional)
    for key in sorted(node, key=str):
        if key not in allowed:
            raise ConfigInvalid(_join(path, key), "unknown field")
    for key in required:
        if key not in node:
            raise ConfigInvalid(_join(path, key), "required field missing")


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(path, "must be a number")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigInvalid(path, "must be finite")
    return v


def _positive(value, path):
    v = _number(value, path)
    if v <= 0.0:
        raise ConfigInvalid(path, "must be positive")
    return v


def _integer(value, path, *, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigInvalid(path, "must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigInvalid(path, f"must be at least {minimum}")
    return int(value)


def _number_list(value, path, *, min_len=1):
    if not isinstance(value, list):
        raise ConfigInvalid(path, "must be a list of numbers")
    if len(value) < min_len:
        raise ConfigInvalid(path, f"needs at least {min_len} entries")
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _ascending_int_list(value, path, *, min_len=1):
    if not isinstance(value, list):
        raise ConfigInvalid(path, "must be a list of integers")
    if len(value) < min_len:
        raise ConfigInvalid(path, f"needs at least {min_len} entries")
    out = [_integer(v, f"{path}[{i}]", minimum=1) for i, v in enumerate(value)]
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigInvalid(path, "must be strictly increasing")
    return out


def _matrix(value, path, *, min_dim=2):
    if not isinstance(value, list) or not value:
        raise ConfigInvalid(path, "must be a list of rows")
    m = len(value)
    if m < min_dim:
        raise ConfigInvalid(path, f"must have at least {min_dim} rows")
    rows = []
    for i, row in enumerate(value):
        entries = _number_list(row, f"{path}[{i}]", min_len=1)
        if len(entries) != m:
            raise ConfigInvalid(f"{path}[{i}]", f"must have {m} entries (square matrix)")
        rows.append(entries)
    return rows


def _choice(value, path, choices):
    if value not in choices:
        raise ConfigInvalid(path, f"must be one of {sorted(choices)}")
    return value


def _weights(node, path, count):
    if "weights" not in node:
        return None
    wpath = _join(path, "weights")
    w = _number_list(node["weights"], wpath)
    if len(w) != count:
        raise ConfigInvalid(wpath, f"needs {count} entries, one per atom")
    if any(v < 0.0 for v in w):
        raise ConfigInvalid(wpath, "must be nonnegative")
    total = sum(w)
    if abs(total - 1.0) > _WEIGHT_TOL:
        raise ConfigInvalid(wpath, f"sum to {total!r}, not 1")
    return np.asarray(w, dtype=float)


# -------------------------------------------------------- system builders


def _build_map_system(node, path):
    if not isinstance(node, dict):
        raise ConfigInvalid(path, "must be a mapping")
    family = _choice(
        node.get("family"),
        _join(path, "family"),
        ("interval_affine", "circle_wave", "projective_matrices"),
    )
    if family == "projective_matrices":
        _section(node, path, ("family", "matrices"), ("weights",))
        mats = _matrix_list(node["matrices"], _join(path, "matrices"))
        maps = []
        for i, m in enumerate(mats):
            try:
                maps.append(projective_of_matrix(np.asarray(m, dtype=float)))
            except ValueError as exc:
                raise ConfigInvalid(f"{_join(path, 'matrices')}[{i}]", str(exc))
        weights = _weights(node, path, len(maps))
    else:
        _section(node, path, ("family", "atoms"), ("weights",))
        atoms = node["atoms"]
        if not isinstance(atoms, list) or not atoms:
            raise ConfigInvalid(_join(path, "atoms"), "must be a non-empty list")
        maps = []
        for i, atom in enumerate(atoms):
            apath = f"{_join(path, 'atoms')}[{i}]"
            try:
                maps.append(_build_atom(family, atom, apath))
            except ValueError as exc:
                raise ConfigInvalid(apath, str(exc))
        weights = _weights(node, path, len(maps))
    try:
        return RandomMapSystem(maps[0].space, tuple(maps), weights)
    except ValueError as exc:
        raise ConfigInvalid(path, str(exc))


def _build_atom(family, atom, apath):
    if family == "interval_affine":
        _section(atom, apath, ("a", "b"))
        return affine_interval(
            _number(atom["a"], _join(apath, "a")),
            _number(atom["b"], _join(apath, "b")),
        )
    _section(atom, apath, ("rho", "c"), ("k",))
    return circle_wave(
        _number(atom["rho"], _join(apath, "rho")),
        _number(atom["c"], _join(apath, "c")),
        _integer(atom.get("k", 1), _join(apath, "k"), minimum=1),
    )


def _matrix_list(value, path, *, dim=None):
    if not isinstance(value, list) or not value:
        raise ConfigInvalid(path, "must be a non-empty list of matrices")
    mats = [_matrix(m, f"{path}[{i}]") for i, m in enumerate(value)]
    m = dim if dim is not None else len(mats[0])
    for i, mat in enumerate(mats):
        if len(mat) != m:
            raise ConfigInvalid(f"{path}[{i}]", f"must be {m}x{m}")
    return mats


def _build_cocycle(node, path):
    _section(node, path, ("matrices",), ("weights",))
    mats = _matrix_list(node["matrices"], _join(path, "matrices"))
    weights = _weights(node, path, len(mats))
    try:
        return Cocycle(tuple(np.asarray(m, dtype=float) for m in mats), weights)
    except ValueError as exc:
        raise ConfigInvalid(_join(path, "matrices"), str(exc))


def _build_source(node, path):
    if not isinstance(node, dict):
        raise ConfigInvalid(path, "must be a mapping")
    if "family" in node:
        return _build_map_system(node, path)
    if "matrices" in node:
        return _build_cocycle(node, path)
    raise ConfigInvalid(path, "needs either a family or a matrices entry")


def _start_point(value, path, source):
    """A start point matching the source: vector on projective, else scalar."""
    if isinstance(source, Cocycle):
        dim = source.dimension
    elif isinstance(source.space, Projective):
        dim = source.space.m
    else:
        return _number(value, path)
    vec = _number_list(value, path, min_len=1)
    if len(vec) != dim:
        raise ConfigInvalid(path, f"needs {dim} coordinates")
    if not any(v != 0.0 for v in vec):
        raise ConfigInvalid(path, "must be a nonzero vector")
    return np.asarray(vec, dtype=float)


def _center(value, path):
    """Centering value: a number, or a [value, stderr] pair."""
    if isinstance(value, list):
        pair = _number_list(value, path, min_len=2)
        if len(pair) != 2:
            raise ConfigInvalid(path, "a centering pair is [value, stderr]")
        if pair[1] < 0.0:
            raise ConfigInvalid(f"{path}[1]", "stderr must be nonnegative")
        return (pair[0], pair[1])
    return _number(value, path)


def _family_path(node, entries, path):
    """Rebuild the family at parameter t with each entry's shift applied."""

    def rebuild(t):
        atoms = [dict(atom) for atom in node["atoms"]]
        for entry in entries:
            atom = atoms[entry["atom"]]
            atom[entry["param"]] = atom[entry["param"]] + entry["delta"] * t
        return _build_map_system({**node, "atoms": atoms}, path)

    return rebuild


# ------------------------------------------------------- kind validators


def _common_top(config, *, system=True):
    required = ["kind", "seed", "params"]
    if system:
        required.append("system")
    _section(config, "", tuple(required), ("output",))
    _integer(config["seed"], "seed", minimum=0)
    _validate_output(config)


def _validate_output(config):
    if "output" not in config:
        return
    _section(config["output"], "output", (), ("prefix",))
    prefix = config["output"].get("prefix")
    if prefix is None:
        return
    if not isinstance(prefix, str) or not prefix:
        raise ConfigInvalid("output.prefix", "must be a non-empty string")
    if "/" in prefix or "\\" in prefix:
        raise ConfigInvalid("output.prefix", "must not contain path separators")


def _validate_certificate(config):
    _common_top(config)
    system = _build_map_system(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("eps", "n", "mc_samples", "margin"))
    _positive(p["eps"], "params.eps")
    _integer(p["n"], "params.n", minimum=1)
    _integer(p["mc_samples"], "params.mc_samples", minimum=10)
    margin = _number(p["margin"], "params.margin")
    if margin < 0.0:
        raise ConfigInvalid("params.margin", "must be nonnegative")
    return {"system": system}


def _validate_spectrum(config):
    _common_top(config)
    cocycle = _build_cocycle(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("n", "trials"))
    _integer(p["n"], "params.n", minimum=1)
    _integer(p["trials"], "params.trials", minimum=2)
    return {"cocycle": cocycle}


def _validate_furstenberg(config):
    _common_top(config)
    cocycle = _build_cocycle(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("burn_in", "samples"))
    _integer(p["burn_in"], "params.burn_in", minimum=0)
    _integer(p["samples"], "params.samples", minimum=100)
    return {"cocycle": cocycle}


def _validate_koopman(config):
    _common_top(config)
    system = _build_map_system(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("cells",))
    _integer(p["cells"], "params.cells", minimum=2)
    return {"system": system}


def _validate_kingman(config):
    _section(config, "", ("kind", "chain", "params"), ("output",))
    _validate_output(config)
    chain = config["chain"]
    _section(chain, "chain", (), ("builtin", "P", "phi1"))
    if "builtin" in chain:
        if len(chain) != 1:
            raise ConfigInvalid("chain", "give either builtin or P and phi1, not both")
        name = _choice(chain["builtin"], "chain.builtin", _BUILTIN_CHAINS)
        P, phi1 = builtin_chain(name)
    else:
        if "P" not in chain or "phi1" not in chain:
            raise ConfigInvalid("chain", "needs either builtin or both P and phi1")
        P = np.asarray(_matrix(chain["P"], "chain.P", min_dim=1), dtype=float)
        phi1 = np.asarray(_number_list(chain["phi1"], "chain.phi1"), dtype=float)
        if phi1.shape != (P.shape[0],):
            raise ConfigInvalid("chain.phi1", f"needs {P.shape[0]} entries, one per state")
    p = config["params"]
    _section(p, "params", ("n_terms", "tail_window"))
    _integer(p["n_terms"], "params.n_terms", minimum=2)
    _integer(p["tail_window"], "params.tail_window", minimum=1)
    return {"P": P, "phi1": phi1}


def _validate_clt(config):
    _common_top(config)
    source = _build_source(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("x", "n_list", "trials", "center", "expect"), ("ks_max",))
    x = _start_point(p["x"], "params.x", source)
    _ascending_int_list(p["n_list"], "params.n_list")
    _integer(p["trials"], "params.trials", minimum=1000)
    center = _center(p["center"], "params.center")
    expect = _choice(p["expect"], "params.expect", ("normal", "degenerate"))
    if expect == "normal":
        if "ks_max" not in p:
            raise ConfigInvalid("params.ks_max", "required when expect is normal")
        _positive(p["ks_max"], "params.ks_max")
    elif "ks_max" in p:
        raise ConfigInvalid("params.ks_max", "only meaningful when expect is normal")
    return {"source": source, "x": x, "center": center}


def _validate_large_deviation(config):
    _common_top(config)
    source = _build_source(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("x", "eps_list", "n_list", "trials", "center", "expect"))
    x = _start_point(p["x"], "params.x", source)
    eps_list = _number_list(p["eps_list"], "params.eps_list")
    if eps_list[0] <= 0.0 or any(b <= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigInvalid("params.eps_list", "must be positive and strictly increasing")
    _ascending_int_list(p["n_list"], "params.n_list", min_len=3)
    _integer(p["trials"], "params.trials", minimum=1000)
    center = _center(p["center"], "params.center")
    _choice(p["expect"], "params.expect", ("decay", "no_tail"))
    return {"source": source, "x": x, "center": center}


def _validate_synchronization(config):
    _common_top(config)
    system = _build_map_system(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("pair_grid_eps", "n", "trials", "threshold"), ("expect",))
    _positive(p["pair_grid_eps"], "params.pair_grid_eps")
    _integer(p["n"], "params.n", minimum=1)
    _integer(p["trials"], "params.trials", minimum=1)
    _positive(p["threshold"], "params.threshold")
    if "expect" in p:
        _choice(p["expect"], "params.expect", ("all", "none"))
    return {"system": system}


def _validate_basins(config):
    _common_top(config)
    system = _build_map_system(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("cells", "n", "trials"))
    _integer(p["cells"], "params.cells", minimum=2)
    _integer(p["n"], "params.n", minimum=1)
    _integer(p["trials"], "params.trials", minimum=1)
    return {"system": system}


def _validate_law_convergence(config):
    _common_top(config)
    system = _build_map_system(config["system"], "system")
    p = config["params"]
    _section(p, "params", ("x", "cells", "n_list", "trials"))
    x = _start_point(p["x"], "params.x", system)
    _integer(p["cells"], "params.cells", minimum=2)
    _ascending_int_list(p["n_list"], "params.n_list")
    _integer(p["trials"], "params.trials", minimum=1)
    return {"system": system, "x": x}


def _validate_sweep(config):
    _common_top(config)
    p = config["params"]
    if not isinstance(p, dict):
        raise ConfigInvalid("params", "must be a mapping")
    flavor = _choice(p.get("flavor"), "params.flavor", ("matrix", "circle", "stationary"))
    if flavor == "matrix":
        _section(p, "params", ("flavor", "t_list", "direction", "burn_in", "samples"))
        cocycle = _build_cocycle(config["system"], "system")
        _sweep_common(p)
        direction = _matrix_list(
            p["direction"], "params.direction", dim=cocycle.dimension
        )
        if len(direction) != len(cocycle.atoms):
            raise ConfigInvalid(
                "params.direction",
                f"needs {len(cocycle.atoms)} matrices, one per atom",
            )
        return {
            "cocycle": cocycle,
            "direction": [np.asarray(m, dtype=float) for m in direction],
        }
    if flavor == "circle":
        _section(p, "params", ("flavor", "t_list", "path", "x0", "burn_in", "samples"))
        system = _build_map_system(config["system"], "system")
        if config["system"].get("family") != "circle_wave":
            raise ConfigInvalid("system.family", "circle sweeps need a circle_wave family")
        _sweep_common(p)
        _number(p["x0"], "params.x0")
        entries = _path_entries(p["path"], config["system"], ("rho", "c"))
        return {"system": system, "path": _family_path(config["system"], entries, "system")}
    _section(p, "params", ("flavor", "t_list", "path", "cells"))
    system = _build_map_system(config["system"], "system")
    family = config["system"].get("family")
    if family == "interval_affine":
        allowed = ("a", "b")
    elif family == "circle_wave":
        allowed = ("rho", "c")
    else:
        raise ConfigInvalid("system.family", "stationary sweeps need a parametric family")
    _number_list(p["t_list"], "params.t_list")
    _integer(p["cells"], "params.cells", minimum=2)
    entries = _path_entries(p["path"], config["system"], allowed)
    return {
        "system": system,
        "path": _family_path(config["system"], entries, "system"),
        "grid": make_grid(system.space, p["cells"]),
    }


def _sweep_common(p):
    _number_list(p["t_list"], "params.t_list")
    _integer(p["burn_in"], "params.burn_in", minimum=0)
    _integer(p["samples"], "params.samples", minimum=100)


def _path_entries(value, system_node, allowed_params):
    if not isinstance(value, list) or not value:
        raise ConfigInvalid("params.path", "must be a non-empty list of shifts")
    n_atoms = len(system_node.get("atoms", ()))
    entries = []
    for i, entry in enumerate(value):
        epath = f"params.path[{i}]"
        _section(entry, epath, ("atom", "param", "delta"))
        atom = _integer(entry["atom"], _join(epath, "atom"), minimum=0)
        if atom >= n_atoms:
            raise ConfigInvalid(_join(epath, "atom"), f"atom index out of range (0..{n_atoms - 1})")
        param = _choice(entry["param"], _join(epath, "param"), allowed_params)
        delta = _number(entry["delta"], _join(epath, "delta"))
        entries.append({"atom": atom, "param": param, "delta": delta})
    return entries


_VALIDATORS = {
    "certificate": _validate_certificate,
    "spectrum": _validate_spectrum,
    "furstenberg": _validate_furstenberg,
    "koopman": _validate_koopman,
    "kingman": _validate_kingman,
    "clt": _validate_clt,
    "large-deviation": _validate_large_deviation,
    "sweep": _validate_sweep,
    "synchronization": _validate_synchronization,
    "basins": _validate_basins,
    "law-convergence": _validate_law_convergence,
}


def validate(config):
    """Full schema check; returns the built objects the runner needs."""
    if not isinstance(config, dict):
        raise ConfigInvalid("config", "top level must be a mapping")
    if "kind" not in config:
        raise ConfigInvalid("kind", "required field missing")
    kind = config["kind"]
    if kind not in _VALIDATORS:
        raise ConfigInvalid("kind", f"unknown experiment kind {kind!r}")
    return _VALIDATORS[kind](config)


# --------------------------------------------------------------- runners


def _point(x):
    arr = np.asarray(x, dtype=float)
    return arr.tolist() if arr.ndim else float(arr)


def _floats(values):
    return [float(v) for v in values]


def _run_certificate(config, ctx, workers):
    p = config["params"]
    cert = mostly_contracting_certificate(
        ctx["system"], p["eps"], p["n"], p["mc_samples"], p["margin"],
        config["seed"], workers=workers,
    )
    return {
        "passed": bool(cert.passed),
        "eps": float(cert.eps),
        "n": int(cert.n),
        "margin": float(cert.margin),
        "mc_samples": int(cert.mc_samples),
        "seed": int(cert.seed),
        "worst_point": _point(cert.worst_point),
        "worst_estimate": float(cert.worst_estimate),
        "worst_stderr": float(cert.worst_stderr),
        "points": [_point(x) for x in cert.points],
        "estimates": _floats(cert.estimates),
        "stderrs": _floats(cert.stderrs),
    }


def _run_spectrum(config, ctx, workers):
    p = config["params"]
    est = lyapunov_spectrum(ctx["cocycle"], p["n"], p["trials"], config["seed"])
    return {
        "exponents": _floats(est.exponents),
        "stderrs": _floats(est.stderrs),
        "n": int(est.n),
        "trials": int(est.trials),
        "seed": int(est.seed),
    }


def _run_furstenberg(config, ctx, workers):
    p = config["params"]
    est = furstenberg_estimate(ctx["cocycle"], p["burn_in"], p["samples"], config["seed"])
    return {
        "value": float(est.value),
        "stderr": float(est.stderr),
        "burn_in": int(est.burn_in),
        "samples": int(est.samples),
        "seed": int(est.seed),
    }


def _run_koopman(config, ctx, workers):
    grid = make_grid(ctx["system"].space, config["params"]["cells"])
    rep = stationary_report(discretize(ctx["system"], grid), _GRID_TOL)
    return {
        "cells": int(grid.n_cells),
        "width": float(grid.width),
        "centers": [_point(c) for c in grid.centers],
        "multiplicity": int(rep.multiplicity),
        "periods": [int(v) for v in rep.periods],
        "classes": [[int(i) for i in cls] for cls in rep.classes],
        "rho2": float(rep.rho2),
        "measures": [_floats(mu) for mu in rep.measures],
    }


def _run_kingman(config, ctx, workers):
    p = config["params"]
    seq = build_additive(ctx["P"], ctx["phi1"], p["n_terms"])
    rep = verify_uniform_kingman(ctx["P"], seq, p["tail_window"])
    gap = rep.additive_identity_gap
    return {
        "via_max_limit": float(rep.via_max_limit),
        "via_ergodic_max": float(rep.via_ergodic_max),
        "via_pointwise_sup": float(rep.via_pointwise_sup),
        "via_inf_formula": float(rep.via_inf_formula),
        "tolerance": float(rep.tolerance),
        "spread": float(rep.spread),
        "agree": bool(rep.agree),
        "agreement": [bool(v) for v in rep.agreement],
        "classes": [[int(i) for i in cls] for cls in rep.classes],
        "ergodic_values": _floats(rep.ergodic_values),
        "additive": bool(rep.additive),
        "additive_identity_gap": None if gap is None else float(gap),
        "floor_hit": bool(rep.floor_hit),
        "n_terms": int(p["n_terms"]),
        "tail_window": int(p["tail_window"]),
    }


def _run_clt(config, ctx, workers):
    p = config["params"]
    samples = collect_sn(
        ctx["source"], ctx["x"], p["n_list"], p["trials"], ctx["center"],
        config["seed"],
    )
    rep = clt_test(samples)
    return {
        "n_list": [int(n) for n in rep.n_list],
        "sigma2": _floats(rep.sigma2),
        "sigma2_stderr": _floats(rep.sigma2_stderr),
        "ks": _floats(rep.ks),
        "degenerate": [bool(d) for d in rep.degenerate],
        "lambda_hat": float(samples.lambda_hat),
        "lambda_stderr": float(samples.lambda_stderr),
        "centering": samples.centering,
        "source": samples.kind,
        "trials": int(samples.trials),
        "seed": int(samples.seed),
    }


def _run_large_deviation(config, ctx, workers):
    p = config["params"]
    fit = large_deviation_fit(
        ctx["source"], ctx["x"], p["eps_list"], p["n_list"], p["trials"],
        ctx["center"], config["seed"],
    )
    return {
        "eps_list": _floats(fit.eps_list),
        "n_list": [int(n) for n in fit.n_list],
        "p_hat": [_floats(row) for row in fit.p_hat],
        "counts": [[int(v) for v in row] for row in fit.counts],
        "h_hat": _floats(fit.h_hat),
        "h_stderr": _floats(fit.h_stderr),
        "convexity": _floats(fit.convexity),
        "lambda_hat": float(fit.lambda_hat),
        "lambda_stderr": float(fit.lambda_stderr),
        "trials": int(fit.trials),
        "seed": int(fit.seed),
    }


def _run_sweep(config, ctx, workers):
    p = config["params"]
    flavor = p["flavor"]
    if flavor == "matrix":
        res = lambda1_sweep(
            ctx["cocycle"], ctx["direction"], p["t_list"],
            burn_in=p["burn_in"], samples=p["samples"], seed=config["seed"],
            workers=workers,
        )
    elif flavor == "circle":
        res = circle_exponent_sweep(
            ctx["system"], ctx["path"], p["t_list"], x0=p["x0"],
            burn_in=p["burn_in"], samples=p["samples"], seed=config["seed"],
            workers=workers,
        )
    else:
        res = stationary_stability_sweep(
            ctx["system"], ctx["path"], p["t_list"], ctx["grid"],
            seed=config["seed"], workers=workers,
        )
    fit = None
    if res.fit is not None:
        fit = {
            "c_hat": float(res.fit.c_hat),
            "gamma_hat": float(res.fit.gamma_hat),
            "gamma_stderr": float(res.fit.gamma_stderr),
            "residual_rms": float(res.fit.residual_rms),
            "used_t": _floats(res.fit.used_t),
        }
    return {
        "kind": res.kind,
        "t_list": _floats(res.t_list),
        "estimates": None if res.estimates is None else _floats(res.estimates),
        "stderrs": None if res.stderrs is None else _floats(res.stderrs),
        "distances": _floats(res.distances),
        "fit": fit,
        "base_value": None if res.base_value is None else float(res.base_value),
        "base_stderr": None if res.base_stderr is None else float(res.base_stderr),
        "multiplicities": (
            None if res.multiplicities is None else [int(v) for v in res.multiplicities]
        ),
        "seed": int(res.seed),
    }


def _run_synchronization(config, ctx, workers):
    p = config["params"]
    fraction = synchronization_test(
        ctx["system"], p["pair_grid_eps"], p["n"], p["trials"], p["threshold"],
        config["seed"],
    )
    return {
        "fraction": float(fraction),
        "pair_grid_eps": float(p["pair_grid_eps"]),
        "n": int(p["n"]),
        "trials": int(p["trials"]),
        "threshold": float(p["threshold"]),
        "seed": int(config["seed"]),
    }


def _run_basins(config, ctx, workers):
    p = config["params"]
    grid = make_grid(ctx["system"].space, p["cells"])
    rep = empirical_basins(
        ctx["system"], grid, p["n"], p["trials"], config["seed"], tol=_GRID_TOL
    )
    return {
        "cells": int(grid.n_cells),
        "centers": [_point(c) for c in grid.centers],
        "fractions": [_floats(row) for row in rep.fractions],
        "unattributed": _floats(rep.unattributed),
        "threshold": float(rep.threshold),
        "n": int(rep.n),
        "trials": int(rep.trials),
        "seed": int(rep.seed),
    }


def _run_law_convergence(config, ctx, workers):
    p = config["params"]
    grid = make_grid(ctx["system"].space, p["cells"])
    rep = law_convergence_test(
        ctx["system"], ctx["x"], grid, p["n_list"], p["trials"], config["seed"],
        tol=_GRID_TOL,
    )
    return {
        "cells": int(grid.n_cells),
        "width": float(grid.width),
        "n_list": [int(n) for n in rep.n_list],
        "distances": _floats(rep.distances),
        "nearest": [int(v) for v in rep.nearest],
        "trials": int(rep.trials),
        "seed": int(rep.seed),
    }


_RUNNERS = {
    "certificate": _run_certificate,
    "spectrum": _run_spectrum,
    "furstenberg": _run_furstenberg,
    "koopman": _run_koopman,
    "kingman": _run_kingman,
    "clt": _run_clt,
    "large-deviation": _run_large_deviation,
    "sweep": _run_sweep,
    "synchronization": _run_synchronization,
    "basins": _run_basins,
    "law-convergence": _run_law_convergence,
}


# --------------------------------------------------------------- verdicts


def _verdict_certificate(config, results):
    return results["passed"]


def _verdict_kingman(config, results):
    gap = results["additive_identity_gap"]
    return results["agree"] and (gap is None or gap <= results["tolerance"])


def _verdict_clt(config, results):
    if config["params"]["expect"] == "degenerate":
        return all(results["degenerate"])
    ks_max = config["params"]["ks_max"]
    return not any(results["degenerate"]) and all(
        k <= ks_max for k in results["ks"]
    )


def _verdict_large_deviation(config, results):
    if config["params"]["expect"] == "no_tail":
        return all(v == 0.0 for row in results["p_hat"] for v in row)
    for row, h, se in zip(results["p_hat"], results["h_hat"], results["h_stderr"]):
        positive = [v for v in row if v > 0.0]
        if len(positive) < 3:
            continue
        if any(b >= a for a, b in zip(positive, positive[1:])):
            continue
        if math.isfinite(h) and math.isfinite(se) and h > 3.0 * se:
            return True
    return False


def _verdict_synchronization(config, results):
    expect = config["params"].get("expect")
    if expect == "all":
        return results["fraction"] == 1.0
    if expect == "none":
        return results["fraction"] == 0.0
    return True


def _verdict_default(config, results):
    return True


_VERDICTS = {
    "certificate": _verdict_certificate,
    "kingman": _verdict_kingman,
    "clt": _verdict_clt,
    "large-deviation": _verdict_large_deviation,
    "synchronization": _verdict_synchronization,
}


# ------------------------------------------------------------- csv tables


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return " ".join(repr(float(v)) for v in value)
    return str(value)


def _table_certificate(results):
    header = ["index", "point", "estimate", "stderr"]
    rows = [
        [i, results["points"][i], results["estimates"][i], results["stderrs"][i]]
        for i in range(len(results["points"]))
    ]
    return header, rows


def _table_spectrum(results):
    header = ["index", "exponent", "stderr"]
    rows = [
        [i + 1, e, s]
        for i, (e, s) in enumerate(zip(results["exponents"], results["stderrs"]))
    ]
    return header, rows


def _table_furstenberg(results):
    return ["value", "stderr"], [[results["value"], results["stderr"]]]


def _table_koopman(results):
    header = ["cell_center"] + [
        f"measure_{i}" for i in range(results["multiplicity"])
    ]
    rows = [
        [results["centers"][c]] + [mu[c] for mu in results["measures"]]
        for c in range(results["cells"])
    ]
    return header, rows


def _table_kingman(results):
    header = ["route", "value"]
    rows = [
        ["max_limit", results["via_max_limit"]],
        ["ergodic_max", results["via_ergodic_max"]],
        ["pointwise_sup", results["via_pointwise_sup"]],
        ["inf_formula", results["via_inf_formula"]],
    ]
    return header, rows


def _table_clt(results):
    header = ["n", "sigma2", "sigma2_stderr", "ks", "degenerate"]
    rows = [
        list(row)
        for row in zip(
            results["n_list"], results["sigma2"], results["sigma2_stderr"],
            results["ks"], results["degenerate"],
        )
    ]
    return header, rows


def _table_large_deviation(results):
    header = ["eps", "n", "p_hat", "count"]
    rows = []
    for e, eps in enumerate(results["eps_list"]):
        for j, n in enumerate(results["n_list"]):
            rows.append([eps, n, results["p_hat"][e][j], results["counts"][e][j]])
    return header, rows


def _table_sweep(results):
    header = ["t", "estimate", "stderr", "distance", "multiplicity"]
    rows = []
    for i, t in enumerate(results["t_list"]):
        rows.append([
            t,
            None if results["estimates"] is None else results["estimates"][i],
            None if results["stderrs"] is None else results["stderrs"][i],
            results["distances"][i],
            None if results["multiplicities"] is None else results["multiplicities"][i],
        ])
    return header, rows


def _table_synchronization(results):
    return ["fraction"], [[results["fraction"]]]


def _table_basins(results):
    width = len(results["fractions"][0]) if results["fractions"] else 0
    header = ["cell_center"] + [f"fraction_{i}" for i in range(width)] + ["unattributed"]
    rows = [
        [results["centers"][c]] + list(results["fractions"][c]) + [results["unattributed"][c]]
        for c in range(results["cells"])
    ]
    return header, rows


def _table_law_convergence(results):
    header = ["n", "distance", "nearest"]
    rows = [
        list(row)
        for row in zip(results["n_list"], results["distances"], results["nearest"])
    ]
    return header, rows


_TABLES = {
    "certificate": _table_certificate,
    "spectrum": _table_spectrum,
    "furstenberg": _table_furstenberg,
    "koopman": _table_koopman,
    "kingman": _table_kingman,
    "clt": _table_clt,
    "large-deviation": _table_large_deviation,
    "sweep": _table_sweep,
    "synchronization": _table_synchronization,
    "basins": _table_basins,
    "law-convergence": _table_law_convergence,
}


def _write_csv(kind, results, path):
    header, rows = _TABLES[kind](results)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


# ------------------------------------------------------------ run, replay


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            config = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigInvalid("config", f"not parseable YAML: {exc}")
    if not isinstance(config, dict):
        raise ConfigInvalid("config", "top level must be a mapping")
    return config


def run(config_path, *, workers=1, out_dir="."):
    """Execute one config; returns (report dict, exit code)."""
    started = time.perf_counter()
    config = _load_config(config_path)
    ctx = validate(config)
    kind = config["kind"]
    results = _RUNNERS[kind](config, ctx, workers)
    passed = _VERDICTS.get(kind, _verdict_default)(config, results)
    verdict = "pass" if passed else "fail"
    prefix = config.get("output", {}).get("prefix") or Path(config_path).stem
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_name = f"{prefix}.report.json"
    csv_name = f"{prefix}.csv"
    figure_name = f"{prefix}.png"
    _write_csv(kind, results, out / csv_name)
    plotting.render(kind, results, out / figure_name)
    report = {
        "version": __version__,
        "kind": kind,
        "config": config,
        "results": results,
        "verdict": verdict,
        "wall_clock_s": time.perf_counter() - started,
        "outputs": {"report": report_name, "csv": csv_name, "figure": figure_name},
    }
    with open(out / report_name, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report, (0 if passed else 2)


def _scalar_equal(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return a == b or (math.isnan(a) and math.isnan(b))
    if type(a) is not type(b):
        return False
    return a == b


def _diff(old, new, path):
    """Dotted path of the first difference between two JSON trees, or None."""
    if isinstance(old, dict) or isinstance(new, dict):
        if not (isinstance(old, dict) and isinstance(new, dict)):
            return path
        for key in sorted(set(old) | set(new), key=str):
            if key not in old or key not in new:
                return _join(path, key)
            found = _diff(old[key], new[key], _join(path, key))
            if found is not None:
                return found
        return None
    if isinstance(old, list) or isinstance(new, list):
        if not (isinstance(old, list) and isinstance(new, list)):
            return path
        if len(old) != len(new):
            return path
        for i, (a, b) in enumerate(zip(old, new)):
            found = _diff(a, b, f"{path}[{i}]")
            if found is not None:
                return found
        return None
    return None if _scalar_equal(old, new) else path


def replay_check(report_path, *, workers=1):
    """Re-execute a report's config; returns None or the first mismatch path."""
    try:
        with open(report_path, encoding="utf-8") as fh:
            report = json.load(fh)
    except OSError as exc:
        raise ReportUnreadable(f"cannot read report: {exc}")
    except ValueError as exc:
        raise ReportUnreadable(f"malformed report JSON: {exc}")
    if not isinstance(report, dict) or "config" not in report or "results" not in report:
        raise ReportUnreadable("report lacks a config echo and results")
    config = report["config"]
    ctx = validate(config)
    fresh = _RUNNERS[config["kind"]](config, ctx, workers)
    return _diff(report["results"], fresh, "results")


# ------------------------------------------------------------------- main


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="randmaps",
        description="run declarative experiments on random compositions of maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a YAML experiment config")
    p_run.add_argument("--workers", type=int, default=1, help="worker pool size")
    p_run.add_argument("--out", default=".", help="directory for report, CSV, figure")
    p_replay = sub.add_parser(
        "replay", help="re-execute a report's config echo and compare bit-exactly"
    )
    p_replay.add_argument("report", help="path to a previously written JSON report")
    p_replay.add_argument("--workers", type=int, default=1, help="worker pool size")
    args = parser.parse_args(argv)
    try:
        if args.workers < 1:
            raise ValueError("--workers must be at least 1")
        if args.command == "run":
            report, code = run(args.config, workers=args.workers, out_dir=args.out)
            print(
                f"{report['kind']}: verdict {report['verdict']} "
                f"({report['wall_clock_s']:.2f}s)"
            )
            for key in ("report", "csv", "figure"):
                print(f"  {key}: {Path(args.out) / report['outputs'][key]}")
            return code
        mismatch = replay_check(args.report, workers=args.workers)
        if mismatch is None:
            print("replay: pass")
            return 0
        print(f"replay: mismatch at {mismatch}")
        return 2
    except (RandmapsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
