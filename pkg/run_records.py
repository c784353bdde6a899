"""
Run record files.

Per seed:  run_seed<S>.csv     seed,episode,return,moving_average,beta
           timing_seed<S>.csv  seed,episode,wall_ms
           params_seed<S>.npz  final parameter groups
Per run:   aggregate.csv       mean and std across seeds per episode
           learning_curves.svg optional plot rendered from the CSVs
Every CSV starts with a '# schema_version: N' line followed by the header.
"""

import csv
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from qrl_errors import ConfigurationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RUN_COLUMNS = ("seed", "episode", "return", "moving_average", "beta")
TIMING_COLUMNS = ("seed", "episode", "wall_ms")
AGGREGATE_COLUMNS = ("episode", "n_seeds", "return_mean", "return_std", "moving_average_mean",
                     "moving_average_std")
EVAL_COLUMNS = ("seed", "episode", "return", "value", "length")


@dataclass(frozen=True)
class RunRow:
    seed: int
    episode: int
    total_reward: float
    moving_average: float
    beta: float


def run_path(output_dir: str, seed: int) -> str:
    return os.path.join(output_dir, f"run_seed{seed}.csv")


def timing_path(output_dir: str, seed: int) -> str:
    return os.path.join(output_dir, f"timing_seed{seed}.csv")


def params_path(output_dir: str, seed: int) -> str:
    return os.path.join(output_dir, f"params_seed{seed}.npz")


def abort_path(output_dir: str, seed: int) -> str:
    return os.path.join(output_dir, f"abort_seed{seed}.npz")


def _fmt(value: float) -> str:
    return repr(float(value))


def write_table(path: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"# schema_version: {SCHEMA_VERSION}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def write_run_records(path: str, rows: Sequence[RunRow]) -> None:
    """Rows must be strictly ordered by (seed, episode)"""
    keys = [(r.seed, r.episode) for r in rows]
    if any(a >= b for a, b in zip(keys, keys[1:])):
        raise ConfigurationError(f"Run rows for {path} are not strictly ordered by (seed, episode)")
    write_table(path, RUN_COLUMNS, ((r.seed, r.episode, _fmt(r.total_reward), _fmt(r.moving_average), _fmt(r.beta))
                                   for r in rows))
    logger.info(f"Wrote {len(rows)} rows to {path}")


def write_timing_records(path: str, seed: int, episodes: Sequence[int], wall_ms: Sequence[float]) -> None:
    write_table(path, TIMING_COLUMNS, ((seed, e, f"{ms:.3f}") for e, ms in zip(episodes, wall_ms)))


def write_eval_records(path: str, seed: int, returns: np.ndarray, values: np.ndarray, lengths: np.ndarray) -> None:
    write_table(path, EVAL_COLUMNS, ((seed, i, _fmt(r), _fmt(v), int(n))
                                    for i, (r, v, n) in enumerate(zip(returns, values, lengths))))


def read_records(path: str) -> pd.DataFrame:
    """Any record CSV as a DataFrame; the schema line must match"""
    if not os.path.exists(path):
        raise ConfigurationError(f"Record file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline().strip()
    if first != f"# schema_version: {SCHEMA_VERSION}":
        raise ConfigurationError(f"{path}: expected schema version {SCHEMA_VERSION}, found '{first}'")
    return pd.read_csv(path, comment="#")


def aggregate_frame(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Per-episode mean and population std of return and moving average across seeds"""
    if not frames:
        raise ConfigurationError("Nothing to aggregate")
    runs = pd.concat(frames, ignore_index=True)
    grouped = runs.groupby("episode", sort=True)
    out = pd.DataFrame({
        "episode": grouped.size().index,
        "n_seeds": grouped.size().values,
        "return_mean": grouped["return"].mean().values,
        "return_std": grouped["return"].std(ddof=0).values,
        "moving_average_mean": grouped["moving_average"].mean().values,
        "moving_average_std": grouped["moving_average"].std(ddof=0).values,
    })
    return out


def write_aggregate(path: str, run_files: Sequence[str]) -> pd.DataFrame:
    frame = aggregate_frame([read_records(f) for f in run_files])
    write_table(path, AGGREGATE_COLUMNS, (
        (int(r.episode), int(r.n_seeds), _fmt(r.return_mean), _fmt(r.return_std),
         _fmt(r.moving_average_mean), _fmt(r.moving_average_std))
        for r in frame.itertuples(index=False)))
    logger.info(f"Wrote aggregate over {len(run_files)} seed(s) to {path}")
    return frame


def save_parameters(path: str, groups: Dict[str, np.ndarray], metadata: Optional[Dict[str, str]] = None) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    payload = {f"group_{name}": np.asarray(values) for name, values in groups.items()}
    for key, value in (metadata or {}).items():
        payload[f"meta_{key}"] = np.array(str(value))
    np.savez(path, **payload)


def load_parameters(path: str) -> Dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise ConfigurationError(f"Parameter file not found: {path}; run train first")
    with np.load(path) as data:
        return {key[len("group_"):]: data[key].copy() for key in data.files if key.startswith("group_")}


def load_metadata(path: str) -> Dict[str, str]:
    with np.load(path) as data:
        return {key[len("meta_"):]: str(data[key]) for key in data.files if key.startswith("meta_")}


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "qrl"
    return plt


def plot_learning_curves(output_dir: str, run_files: Sequence[str], title: str = "") -> str:
    """Render per-seed moving averages and the across-seed mean to learning_curves.svg"""
    plt = _pyplot()
    frames = [read_records(f) for f in run_files]
    fig, ax = plt.subplots(figsize=(7, 4))
    for frame in frames:
        ax.plot(frame["episode"], frame["moving_average"], linewidth=0.6, alpha=0.4)
    aggregate = aggregate_frame(frames)
    mean = aggregate["moving_average_mean"].to_numpy()
    std = aggregate["moving_average_std"].to_numpy()
    ax.plot(aggregate["episode"], mean, color="black", linewidth=1.5, label=f"mean of {len(frames)} seed(s)")
    ax.fill_between(aggregate["episode"], mean - std, mean + std, color="gray", alpha=0.25)
    ax.set_xlabel("episode")
    ax.set_ylabel("return (moving average)")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    path = os.path.join(output_dir, "learning_curves.svg")
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Plot written to {path}")
    return path


def plot_labeling_function(path: str, grid: np.ndarray, values: np.ndarray, points: np.ndarray,
                           point_labels: np.ndarray) -> str:
    """Heat map of a labeling function on [0, 2pi]^2 with the dataset on top"""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4.5))
    extent = (grid[0], grid[-1], grid[0], grid[-1])
    image = ax.imshow(values, origin="lower", extent=extent, cmap="coolwarm", vmin=-1, vmax=1)
    fig.colorbar(image, ax=ax, label="<ZZ>")
    for value, marker in ((1, "o"), (-1, "x")):
        chosen = points[point_labels == value]
        ax.scatter(chosen[:, 0], chosen[:, 1], c="black", marker=marker, s=18, label=f"label {value:+d}")
    ax.set_xlabel("s0")
    ax.set_ylabel("s1")
    ax.legend(loc="upper right", fontsize=7)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return path


def list_run_files(output_dir: str) -> List[str]:
    if not os.path.isdir(output_dir):
        return []
    names = [n for n in os.listdir(output_dir) if n.startswith("run_seed") and n.endswith(".csv")]
    return [os.path.join(output_dir, n) for n in sorted(names, key=lambda n: int(n[len("run_seed"):-4]))]
