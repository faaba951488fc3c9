"""Exception types shared across the package."""


class ConfigError(ValueError):
    """An invalid configuration value or combination."""


class LoadError(ValueError):
    """A file could not be parsed into a dataset, model or config."""
