import json

import pytest

from pare.corpus import BIN_SECONDS, Corpus, InteractionRecord, TimeBinning, load_items
from pare.synthetic import SyntheticSpec, generate

ORIGIN = 1_600_000_000


def ts(b, offset=0):
    """A timestamp inside bin ``b`` (1-based) of a binning anchored at ORIGIN."""
    return ORIGIN + (b - 1) * BIN_SECONDS + offset


def write_items(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def make_corpus(tmp_path, events, items, schema=None):
    """Corpus from ``(user, item, bin)`` events and item dicts; bins anchored at ORIGIN."""
    inter = [InteractionRecord(u, i, ts(b, k)) for k, (u, i, b) in enumerate(events)]
    catalog = load_items(write_items(tmp_path / "items.jsonl", items), schema)
    binning = TimeBinning(ORIGIN, max(b for _, _, b in events))
    return Corpus.build(inter, catalog, binning=binning)


@pytest.fixture(scope="session")
def small_synthetic():
    return generate(SyntheticSpec(n_users=200, n_items=50, n_bins=24, rate=6.0, seed=11))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
