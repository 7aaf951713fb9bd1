"""Knowledge-conflict rectification on implanted toy transformers."""

import json

from . import _corect
from ._corect import CorectError, adacad_step, cad_step, jensen_shannon, make_patch, softmax

__all__ = [
    "CorectError",
    "Workbench",
    "adacad_step",
    "cad_step",
    "jensen_shannon",
    "make_patch",
    "softmax",
]


class Workbench:
    """A conflict set over one implanted model plus the experiment config that built it."""

    def __init__(self, config=None, _native=None):
        self._wb = _native if _native is not None else _corect.Workbench(json.dumps(config or {}))

    @classmethod
    def load(cls, directory, config=None):
        return cls(_native=_corect.Workbench.load(json.dumps(config or {}), str(directory)))

    def save(self, directory):
        self._wb.save(str(directory))

    @property
    def config(self):
        return json.loads(self._wb.config())

    def examples(self):
        return [json.loads(line) for line in self._wb.examples()]

    def decode(self, example_id="", method="corect"):
        return [json.loads(line) for line in self._wb.decode(example_id, method)]

    def trace(self, example_id=""):
        return json.loads(self._wb.trace(example_id))

    def causal(self, example_id="", target="gold"):
        return json.loads(self._wb.causal(example_id, target))

    def run(self):
        return [json.loads(line) for line in self._wb.run()]

    def compare(self, out_dir):
        """Writes the report files and returns the summary CSV text."""
        return self._wb.compare(str(out_dir))

    def sweep(self, axis="alpha"):
        return [dict(zip(("x", "mean", "stderr", "n"), p)) for p in self._wb.sweep(axis)]
