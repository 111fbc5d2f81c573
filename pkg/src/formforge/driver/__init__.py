"""The run engine: planning, dispatch with racing, merging, supervision."""
