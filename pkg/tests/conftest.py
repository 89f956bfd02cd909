import pytest
import torch

from constrained_ec.tokenizer import Vocabulary, build_vocab, RESERVED

torch.set_num_threads(1)


@pytest.fixture
def word_vocab():
    """Whole-word vocabulary over the Table-1 style sentences used in tests."""
    words = "will it get a hotter in hext cheaper stair cheapest airfare from tacoma to orlando".split()
    return build_vocab([" ".join(words)], max_size=500, min_freq=1)


@pytest.fixture
def tiny_vocab():
    """17 tokens: the reserved five plus twelve words."""
    return Vocabulary(list(RESERVED) + [f"w{i}" for i in range(12)])


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE = {}


class _Check:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{self.detail} | {exc_type.__name__}: {exc}".strip(" |")
        _ACCEPTANCE[self.number] = (status, self.title, detail.replace("\n", " "))
        return False


@pytest.fixture
def criterion():
    """``with criterion(3, "title") as check: ...; check.detail = "..."``"""
    return _Check


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    def order(key):
        key = str(key)
        digits = "".join(c for c in key if c.isdigit())
        return int(digits), key

    for number in sorted(_ACCEPTANCE, key=order):
        status, title, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} -- {detail}")
