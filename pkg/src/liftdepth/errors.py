class ConfigError(ValueError):
    """Invalid model, frame or run configuration."""
