import numpy as np
import pytest

from mmmi.core import Column, LongitudinalDataset, StreamPath, derive_stream
from mmmi.simgen import TrialGenParams, apply_dropout, generate_complete

# criterion id -> (passed, detail); filled by tests marked with the `criterion` fixture
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record an acceptance criterion's outcome.

    Usage: ``criterion("C2", "pooling oracle", ok, detail)``; the test should
    then assert ``ok`` so pytest reports the failure too.
    """
    def record(cid, title, ok, detail=""):
        ACCEPTANCE[f"{cid} {title}"] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=_order):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}" + (f"  [{detail}]" if detail else ""))


def _order(key):
    cid = key.split()[0]
    head, _, tail = cid[1:].partition(".")
    return (int(head), tail)


@pytest.fixture(scope="session")
def trial_data():
    """One default simulated trial (with dropout) and its complete version."""
    p = TrialGenParams()
    full, drop = generate_complete(p, derive_stream(StreamPath(11).child("data")))
    masked = apply_dropout(full, drop, p.drop_hazard, derive_stream(StreamPath(11).child("dropout")))
    return p, full, masked, drop


def make_dataset(values, mask=None, names=None, times=None, group=True):
    """Small wide dataset: id, optional group `g`, outcomes y_t0.. ."""
    values = np.asarray(values, dtype=float)
    n_out = values.shape[1] - (2 if group else 1)
    cols = [Column("id", "id")]
    if group:
        cols.append(Column("g", "group", "binary"))
    times = times if times is not None else range(n_out)
    names = names or [f"y_t{t}" for t in range(n_out)]
    cols += [Column(nm, "outcome", "continuous", time=float(t)) for nm, t in zip(names, times)]
    if mask is None:
        mask = np.isnan(values)
    return LongitudinalDataset(tuple(cols), np.nan_to_num(values), mask)
