"""Tests for the dplbfgs package."""
