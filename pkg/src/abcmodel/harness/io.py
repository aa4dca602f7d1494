"""Persistence: binary trajectory streams, run manifests.

Trajectory file layout (little-endian):

* line 1: UTF-8 JSON header terminated by ``\\n`` with keys ``format``
  (``"abctraj-1"``), ``params``, ``base_seed``, ``replica_ids``,
  ``n_snapshots`` and ``sites`` (``N-1``);
* then, replica by replica and snapshot by snapshot, one record of an
  ``<f8`` macroscopic time followed by ``N-1`` bytes holding species codes
  0 (A), 1 (B), 2 (E).
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..species import ModelParams, ReservoirDensities

__all__ = ["write_trajectory", "write_ensemble", "read_trajectories", "params_to_dict",
           "params_from_dict", "RunManifest"]

FORMAT = "abctraj-1"


def params_to_dict(p: ModelParams) -> dict:
    d = asdict(p)
    d["left"] = list(p.left.as_tuple())
    d["right"] = list(p.right.as_tuple())
    return d


def params_from_dict(d: dict) -> ModelParams:
    return ModelParams(int(d["N"]), float(d["beta"]), float(d["beta_tilde"]), float(d["theta"]),
                       float(d["delta"]), ReservoirDensities.from_seq(d["left"]),
                       ReservoirDensities.from_seq(d["right"]))


def _write(path, params, base_seed, ids, times, snaps) -> None:
    header = {"format": FORMAT, "params": params_to_dict(params), "base_seed": int(base_seed),
              "replica_ids": [int(i) for i in ids], "n_snapshots": int(len(times)),
              "sites": int(params.N - 1)}
    rec = np.dtype([("t", "<f8"), ("occ", "u1", (params.N - 1,))])
    body = np.empty(snaps.shape[0] * snaps.shape[1], dtype=rec)
    body["t"] = np.tile(np.asarray(times, float), snaps.shape[0])
    body["occ"] = snaps.reshape(-1, params.N - 1)
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(body.tobytes())


def write_trajectory(path, traj) -> None:
    _write(path, traj.params, traj.seed, [0], traj.times, traj.snapshots[None])


def write_ensemble(path, ens) -> None:
    _write(path, ens.params, ens.base_seed, ens.replica_ids, ens.times, ens.snapshots)


def read_trajectories(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Return ``(header, times, snapshots)`` with snapshots shaped ``(R, n_snap, N-1)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not an {FORMAT} file")
        L = header["sites"]
        rec = np.dtype([("t", "<f8"), ("occ", "u1", (L,))])
        body = np.frombuffer(fh.read(), dtype=rec)
    R = len(header["replica_ids"])
    n = header["n_snapshots"]
    if body.size != R * n:
        raise ValueError(f"{path}: truncated trajectory stream")
    times = body["t"][:n].copy()
    snaps = body["occ"].reshape(R, n, L).astype(np.int8)
    return header, times, snaps


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    status: str = "ok"
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def add(self, path) -> None:
        self.outputs.append(str(path))

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.timings[name] = round(now - self._t0, 6)
        self._t0 = now

    def write(self, out_dir) -> Path:
        missing = [p for p in self.outputs if not os.path.exists(p)]
        if missing and self.status == "ok":
            raise FileNotFoundError(f"manifest lists missing outputs: {missing}")
        path = Path(out_dir) / "manifest.json"
        data = {k: v for k, v in asdict(self).items() if not k.startswith("_")}
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
        return path
