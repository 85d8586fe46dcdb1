"""Schema-guided dialogue engine.

Dialogue behavior is authored declaratively: dialogue schemas describe the
expected episodes of a (sub)conversation, and hierarchical pattern
transduction trees map utterances to canonical gist clauses, logical forms,
and responses. A per-session planner walks the schema episodes, matching
expectations against a fact store and expanding sub-schemas on demand.
"""

__version__ = "0.1.0"
