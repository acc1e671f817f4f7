"""Estimator-style facade: ``fit`` partitions a database, ``predict`` answers queries."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .catalog import CoHashScheme, validate_scheme
from .datagen import Database
from .engine import EstimateReport, execute
from .failure import FailureEvent
from .partitioner import PartitionedDatabase, partition
from .presets import GRAPH, preset
from .query import QuerySpec
from ._validation import check_positive_int, check_probability


class CoHashAQP(BaseEstimator):
    """Approximate aggregate answers over a co-hash partitioned database.

    Parameters
    ----------
    scheme : str or CoHashScheme
        Preset name (``"SDWithout"``, ``"SDWith"``, ``"WD"``, ``"D1"``) or a scheme.
    n_chunks : int
    seed : int
        Hash seed for cluster placement.
    truncate_at : int or None
        Stage terms kept in variance estimates.
    level : float
        Confidence level of the reported intervals.
    use_known_counts : bool
        Divide by true cluster counts rather than estimates from surviving chunks.

    Attributes
    ----------
    partitioned_ : PartitionedDatabase
    cluster_counts_ : dict
    """

    def __init__(self, scheme="SDWithout", n_chunks=20, seed=0, truncate_at=2, level=0.95,
                 use_known_counts=True):
        self.scheme = scheme
        self.n_chunks = n_chunks
        self.seed = seed
        self.truncate_at = truncate_at
        self.level = level
        self.use_known_counts = use_known_counts

    def _resolve_scheme(self) -> CoHashScheme:
        scheme = preset(self.scheme) if isinstance(self.scheme, str) else self.scheme
        if not isinstance(scheme, CoHashScheme):
            raise TypeError("scheme must be a preset name or a CoHashScheme")
        return scheme

    def fit(self, X: Database, y=None) -> "CoHashAQP":
        if not isinstance(X, Database):
            raise TypeError("X must be a Database")
        check_positive_int(self.n_chunks, "n_chunks")
        check_probability(self.level, "level", open_low=True, open_high=True)
        if self.truncate_at is not None:
            check_positive_int(self.truncate_at, "truncate_at")
        scheme = self._resolve_scheme()
        problems = validate_scheme(scheme, GRAPH)
        if problems:
            raise ValueError("invalid scheme: " + "; ".join(problems))
        self.partitioned_: PartitionedDatabase = partition(X, scheme, self.n_chunks, self.seed)
        self.cluster_counts_ = self.partitioned_.cluster_counts
        return self

    def predict(self, query: QuerySpec, event: FailureEvent | None = None) -> EstimateReport:
        check_is_fitted(self, "partitioned_")
        return execute(query, self.partitioned_, event, truncate_at=self.truncate_at,
                       level=self.level, use_known_counts=self.use_known_counts)
