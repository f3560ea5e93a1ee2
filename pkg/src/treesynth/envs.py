"""Environment registry: grammar + renderer + solve metric for each DSL."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .grammar import Grammar, Node, load_grammar
from .render import iou, pixel_match_fraction, render_csg2d, render_tinysvg
from .sketch import sketch_render

ENV_NAMES = ("csg2d", "csg2d-sketch", "tinysvg", "rainbow")

_GRAMMAR_FILES = {
    "csg2d": "csg2d.grammar",
    "csg2d-sketch": "csg2d.grammar",
    "tinysvg": "tinysvg.grammar",
    "rainbow": "rainbow.grammar",
}

SOLVE_THRESHOLD = 0.99


@dataclass
class Environment:
    name: str
    grammar: Grammar
    channels: int

    def render(self, tree: Node) -> np.ndarray:
        return render_csg2d(tree) if self.channels == 1 else render_tinysvg(tree)

    def observe(self, tree: Node, seed: int = 0) -> np.ndarray:
        """Target-side observation; stochastic for the sketch environment."""
        if self.name == "csg2d-sketch":
            return sketch_render(tree, seed)
        return self.render(tree)

    def score(self, candidate: np.ndarray, target: np.ndarray) -> float:
        """Similarity in [0, 1], higher is better: IoU for csg2d, else the
        fraction of pixels within 1/256."""
        if self.name == "csg2d":
            return iou(candidate, target)
        return pixel_match_fraction(candidate, target)

    def loss(self, candidate: np.ndarray, target: np.ndarray) -> float:
        return 1.0 - self.score(candidate, target)

    def is_solved(self, candidate: np.ndarray, target: np.ndarray) -> bool:
        return self.score(candidate, target) >= SOLVE_THRESHOLD


def load_environment(name: str, grammar_path=None) -> Environment:
    if name not in _GRAMMAR_FILES:
        raise ValueError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")
    if grammar_path is not None:
        with open(grammar_path, "r", encoding="utf-8") as f:
            text = f.read()
    else:
        text = (
            resources.files("treesynth")
            .joinpath(f"grammars/{_GRAMMAR_FILES[name]}")
            .read_text(encoding="utf-8")
        )
    grammar = load_grammar(text, name=name)
    return Environment(name, grammar, 1 if name.startswith("csg2d") else 3)
