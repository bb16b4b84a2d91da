"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericDomainError(ArithmeticError):
    """A value left the finite domain an operation requires."""


class ConfigurationError(ValueError):
    """A configuration value is outside its allowed range."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class InputError(ValueError):
    """Bad user-supplied input (empty text, mismatched lengths, ...)."""


class DataError(ValueError):
    """Dataset content is inconsistent (missing annotations, id collisions, ...)."""


class InventoryError(KeyError):
    """A label is not part of the label inventory."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown label"


class SquadFormatError(ValueError):
    """Malformed SQuAD-2.0 JSON; the message names the JSON path."""

    def __init__(self, json_path, message):
        self.json_path = json_path
        super().__init__(f"{json_path}: {message}")
