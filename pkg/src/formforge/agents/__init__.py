"""Agent execution: model backends, role configs, and the turn loop."""
