"""Channel estimators: pilot baselines, EM iterations and receivers."""
