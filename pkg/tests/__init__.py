"""Test package for sac-pde."""
