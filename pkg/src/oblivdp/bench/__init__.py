"""Data generation, contract checks, trace verification and benchmark driver."""
