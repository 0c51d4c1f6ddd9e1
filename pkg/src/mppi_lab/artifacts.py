"""CSV, JSON and plot-script emission shared by the experiment commands.

Every CSV starts with a ``# config_hash=... seed=...`` comment line and a
header row.  Floats are written with ``repr`` so identical runs produce
identical bytes; nothing time-dependent goes into a CSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows, config_hash: str, seed: int | None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash} seed={'' if seed is None else seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[dict, list[str], list[list[str]]]:
    """Return ``(comment fields, header, rows)`` of a CSV written by :func:`write_csv`."""
    lines = Path(path).read_text().splitlines()
    meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
    reader = list(csv.reader(lines[1:]))
    return meta, reader[0], reader[1:]


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


_PLOT_TEMPLATE = '''"""Plot {title}.  Generated alongside the CSV files it reads."""

import csv
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent


def load(name):
    with open(HERE / name) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return {{h: [float(r[i]) if r[i] else float("nan") for r in body] for i, h in enumerate(header)}}


fig, ax = plt.subplots()
{body}
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "{stem}.png", dpi=150)
'''


def write_plot_script(path: Path, title: str, body: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_PLOT_TEMPLATE.format(title=title, body=body.strip(), stem=path.stem))
    return path


@dataclass
class RunRecord:
    """Provenance of one command invocation."""

    scenario: str
    command: str
    config_hash: str
    seed: int | None
    outputs: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    verdicts: dict = field(default_factory=dict)

    def add(self, path: Path) -> Path:
        self.outputs.append(str(path))
        return path

    def save(self, out_dir: Path) -> Path:
        path = Path(out_dir) / f"run_{self.command}_{self.scenario}.json"
        self.outputs.append(str(path))
        return write_json(path, asdict(self))
