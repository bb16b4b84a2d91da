import json

import pytest

# Small budgets so the full CLI pipeline runs in seconds.
TOY_CONFIG = {
    "encoder": {"max_position": 64},
    "srl": {"k": 2, "epochs": 3, "learning_rate": 1e-3},
    "sketchy": {"learning_rate": 1e-3, "batch_size": 16, "gradient_accumulation_steps": 1, "epochs": 100,
                "max_steps": 60, "max_seq_length": 64},
    "intensive": {"learning_rate": 1e-3, "batch_size": 16, "epochs": 100, "max_steps": 60, "max_seq_length": 64},
}

PIPELINE = ["gen-fixtures", "build-vocab", "train-srl", "annotate", "train-sketchy", "train-intensive",
            "tune-verifier", "predict", "evaluate"]


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(TOY_CONFIG), encoding="utf-8")
    return path


# One PASS/FAIL line per acceptance criterion, echoed at the end of the run.
ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail=""):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({name}) {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
