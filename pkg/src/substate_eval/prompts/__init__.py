"""Verbatim prompt templates shipped as package data."""

from __future__ import annotations

from functools import cache
from importlib import resources


@cache
def load(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def decomposer_template() -> str:
    return load("decomposer")


def reasoner_template() -> str:
    return load("reasoner")


def capturer_template() -> str:
    return load("capturer")
