"""Simulation core: engine, fabric models, topology, traffic and experiments."""
