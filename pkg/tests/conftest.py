import csv

import pytest
from hypothesis import settings

settings.register_profile("ci", deadline=None, derandomize=True)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def iris_csv(tmp_path_factory):
    """The classic 150-row iris table written as a headered CSV."""
    from sklearn.datasets import load_iris

    raw = load_iris()
    names = [n.replace(" (cm)", "").replace(" ", "_") for n in raw.feature_names]
    path = tmp_path_factory.mktemp("data") / "iris.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["species"])
        for row, t in zip(raw.data, raw.target):
            writer.writerow([format(v, ".17g") for v in row] + [raw.target_names[t]])
    return path, tuple(names), raw


@pytest.fixture(scope="session")
def breast_cancer_csv(tmp_path_factory):
    """Breast-cancer table with features min-max scaled to [0, 1] per column.

    Column-wise scaling before export keeps the classes from being separated
    purely by feature magnitude once the harness applies its global
    unit-ball normalization.
    """
    from sklearn.datasets import load_breast_cancer

    raw = load_breast_cancer()
    X = (raw.data - raw.data.min(axis=0)) / (raw.data.max(axis=0) - raw.data.min(axis=0))
    cols = [f"f{i}" for i in range(X.shape[1])]
    path = tmp_path_factory.mktemp("data") / "breast_cancer.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols + ["target"])
        for row, t in zip(X, raw.target):
            writer.writerow([format(v, ".17g") for v in row] + [int(t)])
    return path, tuple(cols)
