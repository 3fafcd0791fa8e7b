class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class SizeLimitError(InvalidInputError):
    """Raised when an exhaustive routine is asked for a too-large instance."""


class SchemaError(InvalidInputError):
    """Malformed session/stream data. Carries the offending line and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
