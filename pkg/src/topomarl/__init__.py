"""Topology-enhanced cooperative multi-agent learning for mixed highway traffic."""
__version__ = "0.1.0"
