"""Age-of-information multicast scheduling and tree generation on dynamic
networks, with attention-based actor-critic agents and exact oracles."""

from .errors import (AoILabError, CapacityError, ConvergenceError, DomainError, ParameterError,
                     ParseError, ShapeError, UsageError)
from .graph import (MulticastTree, NetworkGraph, TopologyProcess, assign_roles, fixture_g4,
                    generate_ba, generate_er, ingest_edge_list, is_multicast_tree,
                    parse_edge_list, resample_topology)

__version__ = "0.1.0"
