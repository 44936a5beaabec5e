"""
ebsim - Event-Builder fabric SIMulator

A packet-granular, flit-accounted discrete-event model of an InfiniBand
fat-tree carrying all-to-all event-building traffic.
"""

__version__ = "1.0.0"
__author__ = "ebsim developers"
