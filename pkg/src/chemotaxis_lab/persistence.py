"""On-disk trajectory layout.

A run directory holds ``snap_<index>.csv`` files, ``diagnostics.ndjson`` and
``manifest.json``.  The manifest is written last (atomically), so a
directory without one is an incomplete write.  It lists every file with its
SHA-256 and an overall hash over those, which makes reruns comparable.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .diagnostics import record_to_json
from .grid import read_snapshot, write_snapshot
from .stepper import RunResult, Trajectory

FORMAT_VERSION = "1"
MANIFEST = "manifest.json"
DIAGNOSTICS = "diagnostics.ndjson"


class PersistenceError(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def overall_hash(files: list[dict]) -> str:
    h = hashlib.sha256()
    for entry in sorted(files, key=lambda e: e["name"]):
        h.update(f"{entry['name']}:{entry['sha256']}\n".encode())
    return h.hexdigest()


def write_json_atomic(path, payload) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _prepare(directory) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create {directory}: {exc}") from exc
    if not os.access(directory, os.W_OK):
        raise PersistenceError(f"{directory} is not writable")
    stale = directory / MANIFEST
    if stale.exists():
        stale.unlink()
    return directory


def persist_trajectory(result: RunResult, directory) -> dict:
    directory = _prepare(directory)
    p = result.params
    names = []
    try:
        for i, snap in enumerate(result.snapshots):
            name = f"snap_{i}.csv"
            write_snapshot(directory / name, snap, result.grid)
            names.append(name)
        with open(directory / DIAGNOSTICS, "w") as fh:
            for rec in result.records:
                fh.write(record_to_json(rec, eps=p.eps, m=p.m, run_id=result.run_id) + "\n")
        names.append(DIAGNOSTICS)
    except OSError as exc:
        raise PersistenceError(f"writing into {directory} failed: {exc}") from exc
    files = [{"name": n, "sha256": sha256_file(directory / n)} for n in names]
    manifest = {
        "format_version": FORMAT_VERSION,
        "run_id": result.run_id,
        "config": result.config.to_dict() if result.config is not None else None,
        "grid": {"dim": result.grid.dim, "cells": result.grid.cells, "extent": result.grid.extent},
        "params": {"m": p.m, "eps": p.eps, "v0_max": p.v0_max, "lam": p.lam, "t_final": p.t_final},
        "snapshot_times": [s.t for s in result.snapshots],
        "steps": result.steps,
        "dt_min": result.dt_min,
        "dt_max": result.dt_max,
        "files": files,
        "hash": overall_hash(files),
    }
    write_json_atomic(directory / MANIFEST, manifest)
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise PersistenceError(f"{directory}: no manifest (missing or incomplete write)")
    manifest = json.loads(path.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise PersistenceError(f"{directory}: format version {version!r}, expected {FORMAT_VERSION!r}")
    return manifest


def integrity_problems(directory, manifest: dict | None = None) -> list[str]:
    """Files whose contents no longer match the manifest."""
    directory = Path(directory)
    manifest = manifest or read_manifest(directory)
    problems = []
    for entry in manifest["files"]:
        path = directory / entry["name"]
        if not path.exists():
            problems.append(f"{entry['name']}: missing")
        elif sha256_file(path) != entry["sha256"]:
            problems.append(f"{entry['name']}: hash mismatch")
    if overall_hash(manifest["files"]) != manifest["hash"]:
        problems.append("manifest: overall hash mismatch")
    return problems


def load_trajectory(directory) -> tuple[Trajectory, dict]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    snaps = sorted(
        (e["name"] for e in manifest["files"] if e["name"].startswith("snap_")),
        key=lambda n: int(n[5:-4]),
    )
    if not snaps:
        raise PersistenceError(f"{directory}: manifest lists no snapshots")
    grid, states = None, []
    for name in snaps:
        g, s = read_snapshot(directory / name)
        if grid is not None and g != grid:
            raise PersistenceError(f"{name}: grid differs from the first snapshot")
        grid = g
        states.append(s)
    p = manifest["params"]
    traj = Trajectory(
        grid=grid,
        times=np.array([s.t for s in states]),
        u=np.array([s.u for s in states]),
        v=np.array([s.v for s in states]),
        m=float(p["m"]),
        eps=float(p["eps"]),
        v0_max=float(p["v0_max"]),
        dt_max=float(manifest["dt_max"]),
        run_id=manifest["run_id"],
    )
    return traj, manifest


def load_diagnostics(directory) -> list[dict]:
    with open(Path(directory) / DIAGNOSTICS) as fh:
        return [json.loads(line) for line in fh if line.strip()]
