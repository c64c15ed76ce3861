"""Stage parameters, run manifest and the on-disk artifact cache.

Layout under the output directory::

    taboo/<hash>.csv          one improper c.d.f. per catalyst pair
    taboo/<hash>.npy          raw hitting-time samples for the same pair
    taboo/<set>.json          index of a taboo set (pairs, bias, manifest hash)
    spectral/<hash>.json      SpectralResult plus classification
    phi/<hash>.csv            PhiSolution grid values
    phi/<hash>.json           PhiSolution sidecar
    sim/<hash>/t=<t>.csv      per-checkpoint replicate table
    sim/<hash>/summary.json   ensemble summary

Every hash covers the model, the stage parameters and the seed, so cached
artifacts are reused only when they would be recomputed identically.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import limitlaw as ll
from . import model as mdl
from . import simulator as sm
from . import spectral as sp
from . import taboo as tb
from .walk import TailModel

DEFAULTS = {
    "taboo.n_paths": 100000,
    "taboo.horizon": 409.6,
    "taboo.cells": 32768,
    "fit.t_end": 25.0,
    "fit.lambdas": "0.1,0.03,0.01",
    "fit.rs": "0,1,2,3",
    "solve.lam_min": 1e-6,
    "solve.lam_max": 1e6,
    "solve.per_decade": 64,
    "solve.tol": 1e-10,
    "solve.max_iter": 10000,
    "solve.init": "exponential",
    "plateau.lam_limit": 1e40,
    "sim.replicates": 10000,
    "sim.t_max": 12.0,
    "sim.checkpoints": "4,5,6,7,8,9,10,11,12",
    "sim.cap": 1000000,
    "sim.chunk": 500,
    "sim.workers": 1,
    "verify.reduction_t": 5.0,
    "verify.reduction_replicates": 10000,
    "verify.identity_pairs": "3:10,2:5,5:20",
    "verify.identity_paths": 1000000,
    "verify.ks_checkpoints": "4,6,8",
    "verify.growth_window": "4,8",
    "verify.small_lambda_t": 12.0,
    "verify.small_lambda_lambdas": "0.003,0.01,0.03,0.1,0.3",
    "verify.bound_t": "4,6,8,10,12",
    "verify.bound_r": "0,1,2",
    "verify.bound_lambdas": "0.01,0.03,0.1,0.3,1",
    "verify.plateau_t": "8,12",
    "verify.bigjump_t": "8,16,32",
    "verify.bigjump_c": "0.5,1,2,4",
}


def floats(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(float(value))
    if isinstance(default, float):
        return float(value)
    return str(value)


@dataclass
class Params:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    model_overrides: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_overrides(cls, items):
        p = cls()
        for item in items or ():
            if "=" not in item:
                raise mdl.ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            key = key.strip()
            if key.startswith("model."):
                p.model_overrides[key[len("model."):]] = value
            elif key in DEFAULTS:
                p.values[key] = _coerce(key, value)
            else:
                raise mdl.ConfigError(f"unknown override key {key!r}")
        return p

    def stage(self, prefix):
        return {k: v for k, v in sorted(self.values.items()) if k.startswith(prefix + ".")}


def apply_model_overrides(config, overrides):
    """Dotted-path overrides on the model dictionary, e.g. ``catalysts.0.alpha=0``."""
    if not overrides:
        return config
    d = copy.deepcopy(config.to_dict())
    for path, raw in sorted(overrides.items()):
        parts = path.split(".")
        node = d
        for part in parts[:-1]:
            node = node[int(part)] if isinstance(node, list) else node[part]
        last = parts[-1]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return mdl.validate(mdl.from_dict(d))


def digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


@dataclass
class Manifest:
    model_path: str
    command: str
    seed: int
    out: str
    overrides: dict
    model_hash: str

    def to_dict(self):
        return {"model_path": self.model_path, "command": self.command, "seed": self.seed,
                "out": self.out, "overrides": dict(sorted(self.overrides.items())),
                "model_hash": self.model_hash}

    @property
    def hash(self):
        # locations are not inputs: the same run written elsewhere keeps its hash
        d = self.to_dict()
        del d["model_path"], d["out"]
        return digest(d)


def write_text(path, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Workspace:
    """Artifact cache for one model, seed and parameter set."""

    def __init__(self, config, params, seed, out, manifest=None):
        self.config = config
        self.params = params
        self.seed = int(seed)
        self.out = out
        self.manifest = manifest
        self._taboo = None
        self._spectral = None
        self._phi = None

    @property
    def manifest_hash(self):
        return self.manifest.hash if self.manifest else None

    def _path(self, *parts):
        return os.path.join(self.out, *parts)

    # taboo ------------------------------------------------------------------
    def taboo_key(self, x=None):
        return digest(self.config.hash(), self.params.stage("taboo"), self.seed, x)

    def taboo(self, x=None):
        if x is None and self._taboo is not None:
            return self._taboo
        key = self.taboo_key(x)
        index_path = self._path("taboo", key + ".json")
        p = self.params
        if os.path.exists(index_path):
            est = self._load_taboo(index_path)
        else:
            est = tb.estimate_all(self.config, p["taboo.n_paths"], self.seed,
                                  horizon=p["taboo.horizon"], cells=p["taboo.cells"], x=x)
            self._save_taboo(est, key, index_path)
        if x is None:
            self._taboo = est
        return est

    def _save_taboo(self, est, key, index_path):
        pairs = {}
        for pk, f in est.items():
            name = digest(key, list(pk) if isinstance(pk, tuple) else pk)
            write_text(self._path("taboo", name + ".csv"), f.to_csv())
            np.save(self._path("taboo", name + ".npy"), f.samples)
            pairs["%s,%s" % pk] = {"file": name, "horizon_bias": f.horizon_bias}
        write_json(index_path, {"model_hash": self.config.hash(), "manifest": self.manifest_hash,
                                "n_paths": est.n_paths, "horizon": est.horizon,
                                "cells": est.cells, "x": est.x, "pairs": pairs})

    def _load_taboo(self, index_path):
        with open(index_path) as fh:
            idx = json.load(fh)
        est = tb.TabooEstimates(n_paths=idx["n_paths"], horizon=idx["horizon"],
                                cells=idx["cells"], x=idx["x"])
        for label, info in idx["pairs"].items():
            a, b = label.split(",")
            key = ("x" if a == "x" else int(a), int(b))
            with open(self._path("taboo", info["file"] + ".csv")) as fh:
                f = tb.ImproperCdf.from_csv(fh.read())
            samples = np.load(self._path("taboo", info["file"] + ".npy"))
            est[key] = tb.ImproperCdf(f.step, f.values, f.mass, n_paths=f.n_paths,
                                      horizon_bias=info["horizon_bias"], samples=samples)
        return est

    # spectral ---------------------------------------------------------------
    def classification(self):
        return sp.classify(self.config, self.taboo())

    def spectral(self):
        if self._spectral is not None:
            return self._spectral
        key = digest(self.taboo_key(), self.params.stage("fit"))
        path = self._path("spectral", key + ".json")
        if os.path.exists(path):
            with open(path) as fh:
                d = json.load(fh)
            res = sp.SpectralResult.from_dict(d["result"])
        else:
            p = self.params
            res = sp.spectral_analysis(self.config, self.taboo(), t_end=p["fit.t_end"],
                                       lambdas=tuple(floats(p["fit.lambdas"])),
                                       rs=tuple(floats(p["fit.rs"])))
            cls = self.classification()
            write_json(path, {"result": res.to_dict(), "manifest": self.manifest_hash,
                              "classification": {"verdict": cls.verdict, "rho0": cls.rho0,
                                                 "sigma": cls.sigma, "margin": cls.margin}})
        self._spectral = res
        return res

    def tail(self):
        return TailModel.from_law(self.config.jump, self.spectral().nu)

    # limit law --------------------------------------------------------------
    def grid(self, lam_max=None):
        p = self.params
        return ll.LambdaGrid(p["solve.lam_min"], lam_max or p["solve.lam_max"], p["solve.per_decade"])

    def phi(self, lam_max=None, init=None):
        if lam_max is None and init is None and self._phi is not None:
            return self._phi
        p = self.params
        init = init or p["solve.init"]
        grid = self.grid(lam_max)
        key = digest(self.taboo_key(), self.params.stage("fit"), self.params.stage("solve"),
                     grid.lam_max, init)
        csv_path = self._path("phi", key + ".csv")
        side_path = self._path("phi", key + ".json")
        if os.path.exists(csv_path) and os.path.exists(side_path):
            with open(csv_path) as fh, open(side_path) as fs:
                sol = ll.PhiSolution.from_csv(fh.read(), json.load(fs))
        else:
            sol = ll.solve_system(self.config, self.spectral(), self.taboo(), grid,
                                  tol=p["solve.tol"], max_iter=p["solve.max_iter"], init=init)
            write_text(csv_path, sol.to_csv())
            side = sol.sidecar()
            side["manifest"] = self.manifest_hash
            write_json(side_path, side)
        if lam_max is None and init == p["solve.init"]:
            self._phi = sol
        return sol

    def plateau(self):
        """Extend ``lam_max`` by factors of 10^4 until the plateau is flat."""
        from .errors import PlateauNotReached
        lam_max = self.params["solve.lam_max"]
        while True:
            sol = self.phi(lam_max=lam_max)
            try:
                return ll.q_plateau(sol), lam_max
            except PlateauNotReached:
                lam_max *= 1e4
                if lam_max > self.params["plateau.lam_limit"]:
                    raise

    # simulation -------------------------------------------------------------
    def sim_config(self, **kw):
        p = self.params
        base = dict(t_max=p["sim.t_max"], checkpoints=tuple(floats(p["sim.checkpoints"])),
                    replicates=p["sim.replicates"], population_cap=p["sim.cap"],
                    master_seed=self.seed, chunk_size=p["sim.chunk"], workers=p["sim.workers"])
        base.update(kw)
        return sm.SimConfig(**base)

    def ensemble(self, config=None, sim=None, save=True):
        config = config or self.config
        sim = sim or self.sim_config()
        ens = sm.run_ensemble(config, sim)
        if save:
            key = digest(config.hash(), {k: v for k, v in vars(sim).items() if k != "workers"})
            folder = self._path("sim", key)
            for c, t in enumerate(sim.checkpoints):
                write_text(os.path.join(folder, f"t={t!r}.csv"), ens.checkpoint_csv(c))
            ens.meta["manifest"] = self.manifest_hash
            write_text(os.path.join(folder, "summary.json"), ens.summary_json())
        return ens
