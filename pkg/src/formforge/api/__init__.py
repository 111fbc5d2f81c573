"""HTTP control API: run status, stores, steering, and the event stream."""
