class InputError(ValueError):
    """Bad input data or configuration (CLI exit code 2)."""


class SimulationFailure(RuntimeError):
    """Too many failed Monte Carlo scenarios (CLI exit code 3)."""
