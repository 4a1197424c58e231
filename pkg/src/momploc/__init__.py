"""Compressive mmWave channel estimation with multidimensional OMP and
clock-offset-free indoor localization."""
