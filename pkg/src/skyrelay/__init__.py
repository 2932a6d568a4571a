"""Communication-aware multi-agent RL for decentralized UAV relay
coverage: a 2-D simulator, agent-entity attention policies trained with
CTDE PPO on a hand-rolled autodiff core, a branch-and-bound placement
baseline, and a reproducible experiment harness.
"""

__version__ = "0.1.0"
