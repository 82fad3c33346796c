"""Scalar-level traffic accounting, closed-form traffic predictors and run summaries.

Accounting conventions: one scalar per real number and per integer label.
Embeddings cost ``embed_dim + 1`` scalars per link crossed, once, at init.
Each knowledge message costs ``num_classes + 1`` scalars (distribution plus
a sample tag). Parameter exchanges cost one scalar per model parameter.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

EDGE_CLASSES = ("end-edge", "edge-edge", "edge-cloud")
DIRECTIONS = ("up", "down")
PAYLOADS = ("embedding", "label", "knowledge", "parameters")


class TrafficLedger:
    """Monotone counters keyed by (edge class, direction, payload kind)."""

    def __init__(self):
        self._counts: Dict[tuple, int] = defaultdict(int)

    def add(self, edge_class: str, direction: str, payload: str, scalars: int) -> None:
        if edge_class not in EDGE_CLASSES or direction not in DIRECTIONS or payload not in PAYLOADS:
            raise KeyError(f"unknown ledger key {(edge_class, direction, payload)}")
        if scalars < 0:
            raise ValueError("traffic counts cannot be negative")
        self._counts[(edge_class, direction, payload)] += int(scalars)

    def get(self, edge_class: str, direction: str | None = None, payload: str | None = None) -> int:
        return sum(v for (e, d, p), v in self._counts.items()
                   if e == edge_class and (direction is None or d == direction)
                   and (payload is None or p == payload))

    @property
    def total(self) -> int:
        return sum(self._counts.values())

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        out: Dict[str, Dict[str, int]] = {}
        for e in EDGE_CLASSES:
            if not any(k[0] == e for k in self._counts):
                continue
            row = {"up": self.get(e, "up"), "down": self.get(e, "down")}
            for p in PAYLOADS:
                v = self.get(e, payload=p)
                if v:
                    row[p] = v
            out[e] = row
        return out


@dataclass
class RoundMetrics:
    round: int
    mode: str
    cloud_accuracy: float
    losses: Dict[str, Dict[str, float]] = field(default_factory=dict)
    skr: Dict[str, float] = field(default_factory=dict)
    traffic: Dict[str, Dict[str, int]] = field(default_factory=dict)
    leaf_sets: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.cloud_accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"round": self.round, "mode": self.mode, "cloud_accuracy": self.cloud_accuracy,
                "losses": self.losses, "skr": self.skr, "traffic": self.traffic,
                "leaf_sets": self.leaf_sets}


# -- closed-form predictors ---------------------------------------------------

def predict_fedeec_traffic(client_sizes: Sequence[int], embed_dim: int, knowledge_dim: int,
                           rounds: int, direction: str = "up") -> int:
    """Scalars crossing one edge class for the distillation protocol.

    ``up`` is ``sum|D| * (embed_dim + 1 + rounds * (knowledge_dim + 1))``; the
    downward direction carries only the per-round knowledge.
    """
    if min([embed_dim, knowledge_dim, rounds, *client_sizes]) < 0:
        raise ValueError("inputs must be non-negative")
    total = sum(client_sizes)
    up = total * (embed_dim + 1 + rounds * (knowledge_dim + 1))
    down = total * rounds * (knowledge_dim + 1)
    return {"up": up, "down": down, "both": up + down}[direction]


def predict_hierfavg_traffic(model_sizes: Sequence[int], rounds: int, direction: str = "up") -> int:
    """``rounds * sum|W|`` per direction over the nodes on the lower end of the links."""
    if rounds < 0 or any(s < 0 for s in model_sizes):
        raise ValueError("inputs must be non-negative")
    per_dir = rounds * sum(model_sizes)
    return {"up": per_dir, "down": per_dir, "both": 2 * per_dir}[direction]


# -- summaries ----------------------------------------------------------------

class IncompatibleRunsError(ValueError):
    pass


SUMMARY_COLUMNS = ("method", "seeds", "mean_best_accuracy", "max_best_accuracy",
                   "end_edge_scalars", "edge_cloud_scalars")


def best_accuracy(metrics: Sequence[dict]) -> float:
    return max(m["cloud_accuracy"] for m in metrics)


def summarize(runs: Iterable[dict]) -> List[dict]:
    """One row per method.

    Each run is a mapping with ``config`` (parsed config dict), ``seed`` and
    ``metrics`` (list of per-round dicts). Runs must share their data section,
    i.e. the same test set.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("nothing to summarize")
    ref = runs[0]["config"].get("data", {})
    for r in runs[1:]:
        other = r["config"].get("data", {})
        diff = sorted(k for k in set(ref) | set(other) if ref.get(k) != other.get(k))
        if diff:
            raise IncompatibleRunsError(f"runs disagree on data fields: {', '.join('data.' + k for k in diff)}")
    grouped: Dict[str, list] = defaultdict(list)
    for r in runs:
        grouped[r["metrics"][-1]["mode"]].append(r)
    rows = []
    for method in sorted(grouped):
        group = grouped[method]
        bests = [best_accuracy(r["metrics"]) for r in group]
        last = [r["metrics"][-1]["traffic"] for r in group]
        rows.append({
            "method": method,
            "seeds": " ".join(str(r["seed"]) for r in group),
            "mean_best_accuracy": sum(bests) / len(bests),
            "max_best_accuracy": max(bests),
            "end_edge_scalars": sum(t.get("end-edge", {}).get("up", 0) + t.get("end-edge", {}).get("down", 0)
                                    for t in last) // len(last),
            "edge_cloud_scalars": sum(t.get("edge-cloud", {}).get("up", 0) + t.get("edge-cloud", {}).get("down", 0)
                                      for t in last) // len(last),
        })
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def format_table(rows: Sequence[dict]) -> str:
    header = f"{'method':<10} {'seeds':<14} {'mean best':>10} {'max best':>10} {'end-edge':>14} {'edge-cloud':>14}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['method']:<10} {r['seeds']:<14} {r['mean_best_accuracy']:>10.4f} "
                     f"{r['max_best_accuracy']:>10.4f} {r['end_edge_scalars']:>14d} {r['edge_cloud_scalars']:>14d}")
    return "\n".join(lines)
