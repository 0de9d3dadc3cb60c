"""treecast: deterministic peer-to-peer streaming overlay engine.

A stream of unit rate is cut into m substreams, each pushed down its own
tree-plus-redundant-edge structure over the same peers.  The package bundles
the overlay state and its safety checks, the per-round maintenance protocol,
a discrete-time churn simulator, the analytical delay bounds, the all-cast /
multi-source / cluster extensions, and a command-line front end.
"""

from .overlay import (
    SERVER,
    EdgeKind,
    Overlay,
    OverlayError,
    StreamConfig,
    SubstreamView,
    bootstrap_steady,
    canonical_labels,
    check_property1,
    check_property2,
    check_property3,
    is_steady_state,
    measure_delay,
    subtree_range,
    tree_balanced,
)

__version__ = "0.1.0"

__all__ = [
    "SERVER",
    "EdgeKind",
    "Overlay",
    "OverlayError",
    "StreamConfig",
    "SubstreamView",
    "bootstrap_steady",
    "canonical_labels",
    "check_property1",
    "check_property2",
    "check_property3",
    "is_steady_state",
    "measure_delay",
    "subtree_range",
    "tree_balanced",
    "__version__",
]
