"""CSV log schemas and deterministic readers/writers.

All floats are written with repr() of the Python float (shortest round-trip
form), so rerunning with identical seeds reproduces files byte for byte.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import TrajectoryParseError

TRAJECTORY_COLUMNS = (
    "episode_id",
    "step",
    "x",
    "y",
    "action_x",
    "action_y",
    "reward",
    "violation",
    "done_reason",
)

LOSS_COLUMNS = (
    "task",
    "epoch",
    "actor_loss",
    "value_loss",
    "entropy",
    "mean_ratio",
    "violations_so_far",
)

FITNESS_HISTORY_COLUMNS = (
    "generation",
    "best_F",
    "mean_F",
    "sd_F",
    "best_violations",
    "mutation_sd",
)

ADAPT_REP_COLUMNS = (
    "method",
    "cycle",
    "goal",
    "seed",
    "distance_fitness",
    "episode_reward",
    "exploration_violations",
    "det_violations",
)

REPORT_COLUMNS = (
    "method",
    "mean_fitness",
    "sd_fitness",
    "mean_violations",
    "sd_violations",
    "repetitions",
)

CURVE_COLUMNS = ("world", "method", "seed", "generation", "best_F", "mean_F", "sd_F")


def format_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    if hasattr(v, "item"):  # numpy scalars
        return format_value(v.item())
    return str(v)


def write_csv(path, columns, rows):
    """Write rows (sequences aligned with columns) with stable formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(v) for v in row])


class TrajectoryLog:
    """Accumulates trajectory rows; negative episode ids mark deterministic runs."""

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, episode_id, step, x, y, action_x, action_y, reward, violation, done_reason):
        self.rows.append(
            (
                int(episode_id),
                int(step),
                float(x),
                float(y),
                float(action_x),
                float(action_y),
                float(reward),
                bool(violation),
                done_reason if done_reason is not None else "",
            )
        )

    def write(self, path):
        write_csv(path, TRAJECTORY_COLUMNS, self.rows)


def read_trajectory(path) -> list[dict]:
    """Parse a trajectory CSV; raises TrajectoryParseError with the row number."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise TrajectoryParseError(1, "empty file") from None
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise TrajectoryParseError(1, f"unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRAJECTORY_COLUMNS):
                raise TrajectoryParseError(lineno, f"expected {len(TRAJECTORY_COLUMNS)} fields, got {len(row)}")
            try:
                rows.append(
                    {
                        "episode_id": int(row[0]),
                        "step": int(row[1]),
                        "x": float(row[2]),
                        "y": float(row[3]),
                        "action_x": float(row[4]),
                        "action_y": float(row[5]),
                        "reward": float(row[6]),
                        "violation": bool(int(row[7])),
                        "done_reason": row[8] or None,
                    }
                )
            except ValueError as e:
                raise TrajectoryParseError(lineno, str(e)) from None
    return rows


def read_csv_dicts(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
