"""Propensity step fits, index estimation, effect estimators and pipelines."""
