class UnsupportedKernelError(ValueError):
    """Raised when a kernel lacks the structure an operation requires (transform, sampler, PD tag...)"""
    pass


class DomainError(ValueError):
    """Raised when an approximation domain leaves nothing to evaluate on"""
    pass


class ConfigError(ValueError):
    """Raised when a configuration block or generator configuration is invalid"""
    pass


class ResolutionError(RuntimeError):
    """Raised when a Monte Carlo estimate could not be resolved to the requested accuracy"""
    pass
