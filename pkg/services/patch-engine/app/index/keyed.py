"""
Single-key indexes: hash and ordered (sorted file).

Both map a metadata value to the ids of the patches carrying it. The
ordered index keeps keys sorted and answers half-open range scans with
binary search; the hash index answers equality only.

A key name is a metadata key (``frameno``, ``label``, ``text``...) or a
box coordinate ``bbox.x1``, ``bbox.y1``, ``bbox.x2``, ``bbox.y2``.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple, Union

from ..core.metadata import MetaTag
from ..core.patch import Patch
from ..errors import MissingKeyError
from .counters import QueryCounters

KeyValue = Union[int, float, str]

BOX_COORDS = ("x1", "y1", "x2", "y2")

ORDERED_TAGS = (MetaTag.INTEGER, MetaTag.FLOAT)
HASH_TAGS = (MetaTag.STRING, MetaTag.INTEGER)


def extract_key(patch: Patch, key: str, tags: Tuple[MetaTag, ...]) -> Tuple[KeyValue, MetaTag]:
    """Value of ``key`` on ``patch`` and its tag; raises MissingKeyError."""
    if key.startswith("bbox."):
        coord = key.split(".", 1)[1]
        box = patch.metadata.get("bbox")
        if coord not in BOX_COORDS or box is None or MetaTag.INTEGER not in tags:
            raise MissingKeyError(key, patch.patch_id)
        return getattr(box.value, coord), MetaTag.INTEGER
    value = patch.metadata.get(key)
    if value is None or value.tag not in tags:
        raise MissingKeyError(key, patch.patch_id)
    return value.value, value.tag


def _group(patches: Iterable[Patch], key: str, tags: Tuple[MetaTag, ...]) -> Tuple[Dict[KeyValue, List[int]], Optional[MetaTag]]:
    groups: Dict[KeyValue, List[int]] = {}
    tag: Optional[MetaTag] = None
    for patch in patches:
        value, value_tag = extract_key(patch, key, tags)
        if tag is None:
            tag = value_tag
        elif value_tag is not tag and {tag, value_tag} != set(ORDERED_TAGS):
            raise MissingKeyError(key, patch.patch_id)
        groups.setdefault(value, []).append(patch.patch_id)
    return groups, tag


@dataclass(frozen=True, eq=False)
class OrderedIndex:
    key: str
    keys: Tuple[KeyValue, ...]
    postings: Tuple[Tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return sum(len(ids) for ids in self.postings)

    def range(self, lo: KeyValue, hi: KeyValue, counters: Optional[QueryCounters] = None) -> List[int]:
        """Ids with lo <= key < hi, grouped by ascending key."""
        if counters is not None:
            counters.probes += 1
        start = bisect_left(self.keys, lo)
        stop = bisect_left(self.keys, hi)
        out: List[int] = []
        for ids in self.postings[start:stop]:
            out.extend(ids)
        return out

    def lookup(self, value: KeyValue, counters: Optional[QueryCounters] = None) -> List[int]:
        if counters is not None:
            counters.probes += 1
        pos = bisect_left(self.keys, value)
        if pos < len(self.keys) and self.keys[pos] == value:
            return list(self.postings[pos])
        return []


@dataclass(frozen=True, eq=False)
class HashIndex:
    key: str
    tag: Optional[MetaTag]
    table: Dict[KeyValue, Tuple[int, ...]]

    @property
    def size(self) -> int:
        return sum(len(ids) for ids in self.table.values())

    def lookup(self, value: KeyValue, counters: Optional[QueryCounters] = None) -> List[int]:
        if counters is not None:
            counters.probes += 1
        return list(self.table.get(value, ()))


def build_ordered(patches: Iterable[Patch], key: str) -> OrderedIndex:
    groups, _ = _group(patches, key, ORDERED_TAGS)
    keys = sorted(groups)
    return OrderedIndex(key, tuple(keys), tuple(tuple(groups[k]) for k in keys))


def build_hash(patches: Iterable[Patch], key: str) -> HashIndex:
    groups, tag = _group(patches, key, HASH_TAGS)
    return HashIndex(key, tag, {k: tuple(ids) for k, ids in groups.items()})


def ordered_range(idx: OrderedIndex, lo: KeyValue, hi: KeyValue, counters: Optional[QueryCounters] = None) -> List[int]:
    return idx.range(lo, hi, counters)


def ordered_lookup(idx: OrderedIndex, value: KeyValue, counters: Optional[QueryCounters] = None) -> List[int]:
    return idx.lookup(value, counters)


def hash_lookup(idx: HashIndex, value: KeyValue, counters: Optional[QueryCounters] = None) -> List[int]:
    return idx.lookup(value, counters)
