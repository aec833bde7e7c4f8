"""Multi-turn RL loop for iterative kernel optimization, at desk scale.

Rollout orchestration over parallel trajectories and refinement turns,
turn-level reward aggregation with discounting, group-relative advantage
normalization, the clipped-surrogate policy objective with gradient
verification, reward-hacking guard rules, budgeted prompt construction, and
trajectory-level evaluation metrics. A deterministic synthetic environment
makes the whole loop testable without GPUs or a live model.
"""

__version__ = "0.1.0"
