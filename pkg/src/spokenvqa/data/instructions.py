"""Instruction/response templates at three reasoning levels."""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np

from .scenes import SceneSpec, Shape


class InstructionType(str, enum.Enum):
    CONVERSATION = "conversation"
    SIMPLE = "simple_reasoning"
    COMPLEX = "complex_reasoning"


INSTRUCTION_TYPES = tuple(InstructionType)

PROPERTY = {"circle": "round", "square": "boxy", "triangle": "pointed"}


def relation(a: Shape, b: Shape) -> str:
    """Where ``a`` sits relative to ``b``."""
    if a.bbox.x2 <= b.bbox.x1:
        return "left of"
    if a.bbox.x1 >= b.bbox.x2:
        return "right of"
    if a.bbox.y2 <= b.bbox.y1:
        return "above"
    if a.bbox.y1 >= b.bbox.y2:
        return "below"
    (ax, ay), (bx, by) = a.bbox.center, b.bbox.center
    if abs(ax - bx) >= abs(ay - by):
        return "left of" if ax < bx else "right of"
    return "above" if ay < by else "below"


def region(spec: SceneSpec, shape: Shape) -> str:
    cx, cy = shape.bbox.center
    v = "upper" if cy < spec.height / 2 else "lower"
    h = "left" if cx < spec.width / 2 else "right"
    return f"{v} {h}"


def _unique(spec: SceneSpec, pred: Callable[[Shape], bool]) -> bool:
    hits = [i for i, s in enumerate(spec.shapes) if pred(s)]
    return hits == [spec.target]


def make_instruction(spec: SceneSpec, itype: InstructionType | str, seed: int) -> tuple[str, str]:
    """Return (instruction_text, response_text) about the scene's target shape."""
    itype = InstructionType(itype)
    target = spec.target_shape
    keys = [(s.kind, s.color) for s in spec.shapes]
    if keys.count((target.kind, target.color)) != 1:
        raise ValueError("target cannot be referred to unambiguously")
    rng = np.random.default_rng([seed, INSTRUCTION_TYPES.index(itype)])
    box = target.bbox.to_text()
    prop = PROPERTY[target.kind]

    if itype is InstructionType.CONVERSATION:
        templates = [
            "Where is the {name}?",
            "Can you find the {name} in this picture?",
            "Show me where the {name} is.",
        ]
        question = templates[int(rng.integers(len(templates)))].format(name=target.name)
        answer = f"The {target.name} is at {box}. It sits in the {region(spec, target)} of the image."
        return question, answer

    others = [i for i in range(len(spec.shapes)) if i != spec.target]
    anchor = spec.shapes[others[int(rng.integers(len(others)))]]
    rel = relation(target, anchor)

    if itype is InstructionType.SIMPLE:
        candidates = [
            (lambda s: s.kind == target.kind, f"Which object is the only {prop} one?"),
            (lambda s: s.color == target.color, f"Which object is the only {target.color} thing here?"),
            (lambda s: s.kind == target.kind and s.color == target.color,
             f"Find the {prop} object painted {target.color}."),
        ]
    else:
        candidates = [
            (lambda s: s.kind == target.kind and relation(s, anchor) == rel and s is not anchor,
             f"Which {prop} object lies {rel} the {anchor.name}?"),
            (lambda s: s.color == target.color and relation(s, anchor) == rel and s is not anchor,
             f"What is the {target.color} object {rel} the {anchor.name}?"),
            (lambda s: s.kind == target.kind and s.color == target.color,
             f"Of the shapes {rel} the {anchor.name}, which {prop} one is {target.color}?"),
        ]
    order = rng.permutation(len(candidates))
    question = next(candidates[i][1] for i in order if _unique(spec, candidates[i][0]))
    answer = f"It is the {target.name} at {box}. This {prop} shape sits {rel} the {anchor.name}."
    return question, answer
