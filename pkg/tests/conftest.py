import os
from os import path

import pytest
from hypothesis import HealthCheck, Verbosity, settings
from pytest import Config, Item, PytestCollectionWarning, Session

settings.register_profile(
    "ci",
    max_examples=200,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("dev", max_examples=25, deadline=None)
settings.register_profile(
    "debug", max_examples=25, deadline=None, verbosity=Verbosity.verbose
)

settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev").lower())

RUN_SLOW = os.getenv("CHDG_RUN_SLOW", "0") == "1"

MODULE_ORDER = [
    "mesh",
    "quadrature",
    "reference",
    "local",
    "transmission",
    "solvers",
    "benchmarks",
    "export",
    "cli",
]
"""Test modules from the mesh up to the command line."""


def pytest_collection_modifyitems(
    session: Session, config: Config, items: list[Item]
) -> None:
    """Pytest hook.

    Called after collection has been performed. Tests marked ``slow`` are skipped
    unless ``CHDG_RUN_SLOW=1``. Items are re-ordered in place to be sorted not
    alphabetically but by module, from the mesh up to the command line, and by
    line number inside each module.
    """
    if not RUN_SLOW:
        skip_slow = pytest.mark.skip(reason="set CHDG_RUN_SLOW=1 to run")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip_slow)

    rank = {
        path.join("tests", "unit", f"test_{name}.py"): i
        for i, name in enumerate(MODULE_ORDER)
    }
    for item in items:
        location = item.location[0]
        if location not in rank:
            item.warn(
                PytestCollectionWarning(f"'{location}' path not in module order.")
            )
            rank[location] = len(rank)

    def sort_key(item: Item) -> tuple[int, int]:
        location, lineno, _ = item.location
        return rank[location], lineno or 0

    items.sort(key=sort_key)
