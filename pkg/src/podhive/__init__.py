"""podhive: a hierarchical pod/deck code store with namespace-scoped,
incrementally re-evaluated execution, plus tooling to grow such trees out
of flat call graphs."""

__version__ = "0.1.0"
