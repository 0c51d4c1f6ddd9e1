"""JSON disk cache for oracle results, keyed by scenario hash and oracle parameters."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from mppi_lab.oracles.ocp import OracleSolution, PolicyTable


def cache_key(scenario_hash: str, oracle: str, params: dict) -> str:
    blob = json.dumps({"scenario": scenario_hash, "oracle": oracle, "params": params}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _encode(sol: OracleSolution) -> dict:
    out = {
        "minimizer": [float(x) for x in sol.minimizer],
        "value": float(sol.value),
        "tol": float(sol.tol),
        "method": sol.method,
    }
    if sol.policy is not None:
        out["policy"] = {
            "states": sol.policy.states.tolist(),
            "controls": sol.policy.controls.tolist(),
            "values": sol.policy.values.tolist(),
        }
    return out


def _decode(data: dict) -> OracleSolution:
    policy = None
    if "policy" in data:
        p = data["policy"]
        policy = PolicyTable(np.array(p["states"]), np.array(p["controls"]), np.array(p["values"]))
    return OracleSolution(np.array(data["minimizer"]), data["value"], data["tol"], data["method"], policy)


class OracleCache:
    """Directory of ``<key>.json`` files; a missing directory means an empty cache."""

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)

    def path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> OracleSolution | None:
        p = self.path(key)
        if not p.exists():
            return None
        return _decode(json.loads(p.read_text()))

    def put(self, key: str, sol: OracleSolution) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(key)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(_encode(sol), sort_keys=True, indent=1))
        tmp.replace(p)
        return p

    def fetch(self, scenario_hash: str, oracle: str, params: dict, compute) -> OracleSolution:
        """Return the cached solution or compute, store and return it."""
        key = cache_key(scenario_hash, oracle, params)
        hit = self.get(key)
        if hit is not None:
            return hit
        sol = compute()
        self.put(key, sol)
        return sol
