"""External-memory bisimulation partitioning of DAGs and XML trees."""

__version__ = "0.1.0"
