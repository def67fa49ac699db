"""Bootstrap inference for the effect estimators."""
