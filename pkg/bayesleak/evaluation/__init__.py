"""Risk estimation, metrics, grid search and the experiment runners."""
