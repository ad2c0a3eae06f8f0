"""Non-generative generalized zero-shot learning: adversarial
task-correlated feature disentanglement plus controllable center/edge
pseudo-sample synthesis, on a from-scratch dense-network substrate."""

__version__ = "0.1.0"
