"""Simulation, workload replay, security-game runner, cluster launcher and benchmarks."""
