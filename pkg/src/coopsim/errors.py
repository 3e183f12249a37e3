"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent user-supplied configuration."""


class GeometryError(ValueError):
    """Geometrically impossible input (non-positive distance, node on the AP)."""


class NotAHelperError(ValueError):
    """A relay rate was requested for a node that cannot meet the target itself."""
