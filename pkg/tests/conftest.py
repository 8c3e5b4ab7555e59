import numpy as np
import pytest

from hreval.store import write_manifest, write_split
from hreval.synthetic import build_fixture


@pytest.fixture(scope="session")
def fixture_plan(tmp_path_factory):
    """Plan path of the three-run synthetic pool (built once per session)."""
    return build_fixture(tmp_path_factory.mktemp("fixture"), seed=0)


@pytest.fixture
def make_run(tmp_path):
    """Write a logits-only run from ``{role: (logits, labels)}`` and return its manifest path."""

    def _make(splits, model_id="m", group="baseline", directory=None, extra=None):
        d = directory or tmp_path / model_id
        d.mkdir(parents=True, exist_ok=True)
        k = None
        entries = []
        for role, (z, y) in splits.items():
            z = np.asarray(z, dtype=float)
            k = z.shape[1]
            write_split(d / f"{role}.hre", z, y)
            entry = {"role": role, "path": f"{role}.hre"}
            entry.update((extra or {}).get(role, {}))
            entries.append(entry)
        write_manifest(d / "manifest.json", model_id, group, k, entries)
        return d / "manifest.json"

    return _make


def blob_logits(rng, n, k, margin=2.0, noise=1.0):
    y = rng.integers(0, k, n)
    z = rng.normal(0, noise, (n, k))
    z[np.arange(n), y] += margin
    return z, y
