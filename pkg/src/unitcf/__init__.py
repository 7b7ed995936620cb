"""Heterogeneous pairwise exponential-family fitting from one sample per unit,
with counterfactual means and measurement-error imputation."""

__version__ = "0.1.0"
