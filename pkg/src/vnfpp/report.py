"""CSV output shared by all commands.

Every results file starts with the columns ``run_id, seed, candidate_id, L,
P, E_C`` so that files from different commands can be scored together.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .encoding import Phenotype

BASE_FIELDS = ["run_id", "seed", "candidate_id", "L", "P", "E_C"]


def output_dir(explicit: str | None) -> Path:
    path = Path(explicit or os.environ.get("VNFPP_OUTPUT_DIR") or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_rows(path, rows: list[dict], extra: list[str] | None = None, base: list[str] | None = None) -> Path:
    fields = list(BASE_FIELDS if base is None else base) + list(extra or [])
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return path


def read_rows(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def objectives_of(rows: list[dict]) -> np.ndarray:
    return np.array([[float(r["L"]), float(r["P"]), float(r["E_C"])] for r in rows], dtype=float).reshape(-1, 3)


def encode_ints(values) -> str:
    return " ".join(str(int(v)) for v in values)


def encode_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def decode_ints(text: str) -> np.ndarray:
    return np.array([int(t) for t in text.split()], dtype=np.int64)


def phenotype_tables(instance, phenotype: Phenotype, max_paths: int = 64) -> tuple[list[dict], list[dict]]:
    """Per-instance placement rows and per-route rows with probabilities.

    Routes are enumerated per instance and truncated at ``max_paths``.
    """
    topo = instance.topology
    inst_rows, path_rows = [], []
    for s, insts in enumerate(phenotype.instances):
        sid = instance.services[s].id
        for i, inst in enumerate(insts):
            inst_rows.append(
                {
                    "service": sid,
                    "instance": i,
                    "vms": encode_ints(inst.vms),
                    "servers": encode_ints(topo.server_of_vm(v) for v in inst.vms),
                    "vnfs": " ".join(instance.vnf_catalog[phenotype.assignment[v]].id for v in inst.vms),
                }
            )
            for n, (path, prob) in enumerate(inst.paths()):
                if n >= max_paths:
                    break
                path_rows.append(
                    {
                        "service": sid,
                        "instance": i,
                        "route": n,
                        "probability": prob / len(insts),
                        "components": encode_ints(path),
                    }
                )
    return inst_rows, path_rows
