import copy
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from sdnr.netmodel import build_case, load_case  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
CASE_PATH = ROOT / "cases" / "ieee33.case"

# Frozen outputs of tests/oracles.py (see test_oracles.py, which recomputes them).
ORACLE_LOSS_KW = 202.67712645344494
ORACLE_VMIN = 0.9130904793688801
ORACLE_SIGMA_TAU_1_5 = 0.6965745025576967
ORACLE_PV_UNIT_KW = 160.72153695
ORACLE_RENEWAL_U = 1.729692625589431e-05


@pytest.fixture(scope="session")
def case33():
    return load_case(CASE_PATH)


@pytest.fixture(scope="session")
def case33_doc():
    return yaml.safe_load(CASE_PATH.read_text())


def case33_branch_rows(doc):
    return [(b["id"], b["from_bus"], b["to_bus"], b["resistance"], b["reactance"]) for b in doc["branches"]]


FLAT = [1.0] * 24


def toy_doc(n_bus=4, loads=None, branches=None, devices=None, **extra):
    """Small feeder document: a path 1-2-..-n unless ``branches`` is given."""
    loads = loads or [(0.0, 0.0)] + [(100.0, 50.0)] * (n_bus - 1)
    if branches is None:
        branches = [(k, k, k + 1, 0.5, 0.3, False) for k in range(1, n_bus)]
    doc = {
        "name": "toy",
        "base_kv": 12.66,
        "base_kva": 1000.0,
        "limits": {"v_min": 0.95, "v_max": 1.05, "switch_budget": 4, "switch_price": 0.0},
        "buses": [
            {"id": i + 1, "peak_active": p, "peak_reactive": q, "demand_pattern": "none" if i == 0 else "residential"}
            for i, (p, q) in enumerate(loads)
        ],
        "branches": [
            {"id": bid, "from_bus": f, "to_bus": t, "resistance": r, "reactance": x, "ampacity": 400.0,
             "length": 1.0, "switchable": True, "normally_open": no}
            for bid, f, t, r, x, no in branches
        ],
        "profiles": {"residential": FLAT},
        "prices": [50.0] * 24,
        "devices": devices or {},
    }
    doc.update(extra)
    return doc


def toy_case(**kw):
    return build_case(toy_doc(**kw))


def with_devices(doc, devices):
    doc = copy.deepcopy(doc)
    doc["devices"] = devices
    return doc


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One verdict line per acceptance criterion, echoed again in the terminal summary
# so they stay visible when pytest captures output.
ACCEPTANCE_LINES: list[str] = []


def record_verdict(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
