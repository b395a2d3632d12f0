"""Multifidelity digital twin for net cage structural response."""
