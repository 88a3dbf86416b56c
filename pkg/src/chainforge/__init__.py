"""Stochastic supply-chain optimizer for chip firms."""
