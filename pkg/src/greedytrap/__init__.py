"""Toolkit for analyzing when greedy (no-exploration) play succeeds or fails
on structured bandit problems: structural predicates, constructive trap
generators, exact greedy simulation, and Monte Carlo failure estimation."""

__version__ = "0.1.0"
