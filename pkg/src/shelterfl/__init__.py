"""Federated-learning simulator for predicting long-term shelter use."""

__version__ = "0.1.0"
