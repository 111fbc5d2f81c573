"""Tool registry, built-in tool suite, and external tool-server adapters."""
