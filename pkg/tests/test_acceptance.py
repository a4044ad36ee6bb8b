"""Acceptance gate: one test per criterion in absde_lab.validation.

Each test runs its criterion and prints a single PASS/FAIL line with the
measured numbers, so `pytest -v -s tests/test_acceptance.py` reads as the
acceptance report.  Tolerances live next to the measurements in
absde_lab/validation.py.
"""

import warnings

import pytest

from absde_lab import validation

_BY_TAG = {crit.tag: crit for crit in validation.CRITERIA}


def _run(tag):
    crit = _BY_TAG[tag]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        passed, detail = crit.fn()
    line = f"{'PASS' if passed else 'FAIL'} criterion {crit.number} ({tag}): {detail}"
    print(line)
    assert passed, line
    return detail


def test_criterion_01_constants_exact():
    _run("constants")


def test_criterion_02_window_identity():
    _run("window")


def test_criterion_03_barrier_oracle():
    _run("barrier")


def test_criterion_04_martingale_recovery():
    _run("martingale")


def test_criterion_05_anticipated_closed_form():
    _run("closed-form")


def test_criterion_06_picard_contraction():
    _run("contraction")


def test_criterion_07_barrier_stitch():
    _run("stitch")


def test_criterion_08_transform_correctness():
    _run("transform")


def test_criterion_09_cross_strategy_agreement():
    _run("cross")


def test_criterion_10_apriori_bound():
    _run("apriori")


def test_criterion_11_seed_reproducibility():
    _run("seeds")


def test_criterion_12_parser_and_fuzz():
    _run("parser")


def test_registry_is_complete():
    numbers = sorted(crit.number for crit in validation.CRITERIA)
    assert numbers == list(range(1, 13))
    assert len(_BY_TAG) == 12, "criterion tags must be unique"
