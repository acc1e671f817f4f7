"""Approximate aggregate queries over co-hash partitioned data with chunk failures."""

from .api import CoHashAQP
from .catalog import (CoHashHierarchy, CoHashScheme, JoinCondition, RelationSchema, SchemaGraph,
                      is_nonredundant, load_catalog, validate_scheme)
from .datagen import Database, GenConfig, generate
from .engine import EstimateReport, NotApproximable, Unanswerable, execute
from .failure import FailureEvent, StragglerModel, inject, profile
from .partitioner import PartitionedDatabase, hash_to_chunk, partition
from .planner import QueryPlan, plan_query
from .query import Aggregate, NestedQuery, Predicate, QuerySpec, load_queries

__all__ = [
    "Aggregate", "CoHashAQP", "CoHashHierarchy", "CoHashScheme", "Database", "EstimateReport",
    "FailureEvent", "GenConfig", "JoinCondition", "NestedQuery", "NotApproximable",
    "PartitionedDatabase", "Predicate", "QueryPlan", "QuerySpec", "RelationSchema", "SchemaGraph",
    "StragglerModel", "Unanswerable", "execute", "generate", "hash_to_chunk", "inject",
    "is_nonredundant", "load_catalog", "load_queries", "partition", "plan_query", "profile",
    "validate_scheme",
]
__version__ = "0.1.0"
