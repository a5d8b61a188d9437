"""Self-stabilizing Steiner tree maintenance in a simulated message-passing network."""

from .graph import Graph, TopologyEvent, load_graph
from .simulator import Scenario, Trace, run

__all__ = ["Graph", "TopologyEvent", "load_graph", "Scenario", "Trace", "run"]
