"""Monte Carlo experiment harness: config loading, metrics, runner, self-test."""
