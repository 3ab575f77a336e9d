import numpy as np
import pytest

from attentab.data import KIND_CONTINUOUS, KIND_TARGET, ColumnSchema, FeatureSchema

CRITERIA_LINES: list[str] = []


def criterion(num: int, ok: bool, detail: str) -> bool:
    """Record one acceptance-criterion verdict for the terminal summary."""
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return ok


def criterion_skip(num: int, detail: str) -> None:
    CRITERIA_LINES.append(f"criterion {num:>2}: SKIP  {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def continuous_schema(n_features: int, labels: list[str]) -> FeatureSchema:
    columns = [
        ColumnSchema(name=f"x{j}", kind=KIND_CONTINUOUS) for j in range(n_features)
    ] + [ColumnSchema(name="label", kind=KIND_TARGET)]
    return FeatureSchema(columns=columns, target="label", labels=labels)


@pytest.fixture
def tiny_schema():
    """4 continuous features, 2 classes: the smallest end-to-end model."""
    return continuous_schema(4, ["a", "b"])
