"""formforge: verification-gated multi-agent orchestration engine.

Coordinates many model-backed agents building a shared, mechanically
verified codebase from a manifest of target statements: a persistent task
DAG, git-worktree isolation with a batched bisecting merge queue, a tool
calling agent runtime with usage accounting, a declaration dependency
graph with structural-defect tags, and a three-stage evaluation harness
feeding a target-level supervisor loop.
"""

__version__ = "0.1.0"
