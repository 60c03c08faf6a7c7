from dataclasses import asdict, dataclass
from typing import Dict


@dataclass
class QueryCounters:
    """Work done by index queries; callers own one per query or plan."""

    probes: int = 0
    nodes_visited: int = 0
    leaves_visited: int = 0
    distance_evaluations: int = 0

    def add(self, other: "QueryCounters") -> None:
        self.probes += other.probes
        self.nodes_visited += other.nodes_visited
        self.leaves_visited += other.leaves_visited
        self.distance_evaluations += other.distance_evaluations

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)
