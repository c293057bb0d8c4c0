import pathlib
import sys

SRC = pathlib.Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

import pytest

from glycanrules.grammar import parse_dataset, parse_rules

DATASETS = pathlib.Path(__file__).resolve().parent.parent / "datasets"


@pytest.fixture(scope="session")
def motivating():
    return parse_dataset((DATASETS / "motivating.gly").read_text())


@pytest.fixture(scope="session")
def motivating_rules(motivating):
    return parse_rules(
        (DATASETS / "motivating_rules.gr").read_text(), motivating.alphabet
    )


@pytest.fixture(scope="session")
def first_iteration_rules(motivating):
    return parse_rules(
        (DATASETS / "first_iteration_rules.gr").read_text(), motivating.alphabet
    )


@pytest.fixture(scope="session")
def dataset_dir():
    return DATASETS
