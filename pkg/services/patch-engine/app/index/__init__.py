"""Hash, ordered, R-tree and Ball-tree indexes over patch collections."""

from .balltree import (
    DEFAULT_LEAF_SIZE,
    BallTreeIndex,
    GrowingBallTree,
    balltree_knn,
    balltree_within,
    balltree_within_many,
    build_balltree,
    build_balltree_arrays,
)
from .counters import QueryCounters
from .keyed import (
    HashIndex,
    OrderedIndex,
    build_hash,
    build_ordered,
    extract_key,
    hash_lookup,
    ordered_lookup,
    ordered_range,
)
from .persist import (
    INDEX_TABLE,
    IndexKind,
    deserialize_index,
    kind_of,
    list_indexes,
    load_index,
    save_index,
    serialize_index,
)
from .rtree import DEFAULT_CAPACITY, DEFAULT_MIN_FILL, RTreeIndex, RTreeMode, build_rtree, rtree_query
from .sources import box_entries, feature_points

__all__ = [
    "DEFAULT_CAPACITY",
    "DEFAULT_LEAF_SIZE",
    "DEFAULT_MIN_FILL",
    "INDEX_TABLE",
    "BallTreeIndex",
    "GrowingBallTree",
    "HashIndex",
    "IndexKind",
    "OrderedIndex",
    "QueryCounters",
    "RTreeIndex",
    "RTreeMode",
    "balltree_knn",
    "balltree_within",
    "balltree_within_many",
    "box_entries",
    "build_balltree",
    "build_balltree_arrays",
    "build_hash",
    "build_ordered",
    "build_rtree",
    "deserialize_index",
    "extract_key",
    "feature_points",
    "hash_lookup",
    "kind_of",
    "list_indexes",
    "load_index",
    "ordered_lookup",
    "ordered_range",
    "rtree_query",
    "save_index",
    "serialize_index",
]
