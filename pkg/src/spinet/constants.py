"""Physical constants in Hartree atomic units."""

# Boltzmann constant, Hartree per Kelvin (CODATA 2018).
KB_HARTREE_PER_KELVIN = 3.166811563e-6


def beta_from_kelvin(temperature: float) -> float:
    """Inverse temperature (1/Hartree) for a temperature in Kelvin."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return 1.0 / (KB_HARTREE_PER_KELVIN * temperature)


def kelvin_from_beta(beta: float) -> float:
    """Temperature in Kelvin for an inverse temperature in 1/Hartree."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return 1.0 / (KB_HARTREE_PER_KELVIN * beta)
