import numpy as np
import pytest

from ddis.fields import make_grid
from ddis.random_fields import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def grid16():
    return make_grid(16)


@pytest.fixture
def grid32():
    return make_grid(32)


def dense_sine_matrix(grid):
    """Column j = samples of the j-th basis function (explicit sin products, no FFT)."""
    X, Y = grid.mesh()
    R = grid.resolution
    cols = []
    for n in range(1, R + 1):
        for m in range(1, R + 1):
            cols.append((2.0 * np.sin(m * np.pi * X) * np.sin(n * np.pi * Y)).ravel())
    return np.array(cols).T


# a seconds-scale inverse problem for experiment / CLI tests
TINY = {
    "resolution": 8,
    "obs_count": 6,
    "prior_centers": 6,
    "repeats": 2,
    "seed": 7,
    "schedule": {"steps": 4},
    "langevin": {"steps": 5},
}


@pytest.fixture
def tiny_config_path(tmp_path):
    import json

    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


WALL_CLOCK_KEYS = ("seconds", "seconds_per_sample")


def _strip_json(obj):
    if isinstance(obj, dict):
        return {k: _strip_json(v) for k, v in obj.items() if k not in WALL_CLOCK_KEYS}
    if isinstance(obj, list):
        return [_strip_json(v) for v in obj]
    return obj


def deterministic_bytes(path):
    """File contents with wall-clock fields removed; all other bytes kept verbatim."""
    import csv
    import io
    import json

    raw = path.read_bytes()
    if path.suffix == ".json":
        doc = json.loads(raw)
        return json.dumps(_strip_json(doc), sort_keys=True).encode()
    if path.suffix == ".csv":
        rows = list(csv.reader(io.StringIO(raw.decode())))
        if rows and any(k in rows[0] for k in WALL_CLOCK_KEYS):
            keep = [i for i, k in enumerate(rows[0]) if k not in WALL_CLOCK_KEYS]
            return "\n".join(",".join(r[i] for i in keep) for r in rows).encode()
    return raw


def snapshot(directory):
    """Map relative path -> deterministic bytes for every file under ``directory``."""
    root = directory
    return {str(p.relative_to(root)): deterministic_bytes(p) for p in sorted(root.rglob("*")) if p.is_file()}


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def acceptance_report(number, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
