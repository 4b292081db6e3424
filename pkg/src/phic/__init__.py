"""Predict whether a person will interpret a data-visualization item correctly.

Modules
-------
core      domain types and validation
ingest    CSV interchange and the synthetic corpus generator
rasch     Rasch calibration (JMLE) and held-out difficulties
features  per-position feature tables
modeling  logistic regression, random forest, MLP and filter selectors
eval      repeated stratified cross-validation and summary metrics
analysis  correctness by session, gain-ratio importance, ablation
adaptive  adaptive item selection simulator
cli       ``phic`` command-line entry point
"""

__version__ = "0.1.0"
