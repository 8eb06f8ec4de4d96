"""Importance-sampling ML direct position determination for moving arrays."""
