"""Portfolio optimization under a hidden regime-switching market with a defaultable security."""
