class InvalidParameter(ValueError):
    """An input violates a documented precondition."""
