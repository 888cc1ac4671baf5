import numpy as np
import pytest

from minbench.dataset import Dataset, SyntheticSpec, TemporalHoldout, generate_synthetic, split


def make_dataset(rows, **kw):
    """Dataset from (user, item, rating, timestamp) tuples."""
    users, items, ratings, stamps = zip(*rows)
    return Dataset(users, items, ratings, stamps, **kw)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(
        SyntheticSpec(
            n_users=60,
            n_items=40,
            latent_dim=3,
            group_fractions=(("majority", 0.8), ("minority", 0.2)),
            group_preference_shift=1.0,
            interactions_per_user=15,
            seed=11,
        )
    )


@pytest.fixture(scope="session")
def small_split(small_data):
    return split(small_data, TemporalHoldout(0.2), 0)


@pytest.fixture
def rng_np():
    return np.random.default_rng(0)


# acceptance lines, printed together at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
