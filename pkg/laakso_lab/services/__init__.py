"""Graph, metric, map and energy services."""
