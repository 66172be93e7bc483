"""Switch-cost-aware Bayesian optimization over modular pipelines."""
