"""
Pull-iterator operator contract.

An operator consumes iterators of patch tuples from its children and
produces an iterator of patch tuples. Evaluation is demand driven: nothing
runs until the root is iterated. Each operator keeps its own counters;
wall time is inclusive of the children pulled while producing a tuple.
"""

from __future__ import annotations

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterator, List, Tuple

from .patch import Patch

PatchTuple = Tuple[Patch, ...]


@dataclass
class OperatorStats:
    operator: str
    wall_ns: int = 0
    tuples_out: int = 0
    index_probes: int = 0
    self_ns: int = 0


class Operator(ABC):
    """Base class of every plan operator."""

    name = "operator"

    def __init__(self, *children: Operator):
        self.children: List[Operator] = list(children)
        self.stats = OperatorStats(self.name)

    @abstractmethod
    def produce(self) -> Iterator[PatchTuple]:
        """Yield output tuples, pulling from children as needed."""

    def __iter__(self) -> Iterator[PatchTuple]:
        source = self.produce()
        stats = self.stats
        while True:
            started = time.perf_counter_ns()
            try:
                item = next(source)
            except StopIteration:
                stats.wall_ns += time.perf_counter_ns() - started
                break
            stats.wall_ns += time.perf_counter_ns() - started
            stats.tuples_out += 1
            yield item
        stats.self_ns = max(0, stats.wall_ns - sum(child.stats.wall_ns for child in self.children))

    def walk(self) -> Iterator[Operator]:
        """Preorder traversal of the operator tree."""
        yield self
        for child in self.children:
            yield from child.walk()

    def arity(self) -> int:
        """Number of patches in each output tuple."""
        return sum(child.arity() for child in self.children) if self.children else 1
