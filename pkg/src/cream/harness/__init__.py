"""Adversary scenarios, randomized properties and measurements."""
