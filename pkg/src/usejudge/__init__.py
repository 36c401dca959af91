"""Multilevel usefulness judging of clicked search results with LLM voters."""

from .core import (
    ClickEvent,
    DocRecord,
    JudgmentInstance,
    LabelSource,
    OrdinalScale,
    QueryRecord,
    SearchSession,
    UsefulnessLabel,
    make_scale,
)

__version__ = "0.1.0"

__all__ = [
    "ClickEvent",
    "DocRecord",
    "JudgmentInstance",
    "LabelSource",
    "OrdinalScale",
    "QueryRecord",
    "SearchSession",
    "UsefulnessLabel",
    "make_scale",
    "__version__",
]
