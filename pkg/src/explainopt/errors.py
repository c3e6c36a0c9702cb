"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map it
without a lookup table: 2 for bad input data, 3 for infeasibility or refused
work (budget guards).
"""


class ExplainOptError(Exception):
    exit_code = 2


class ContractError(ExplainOptError, ValueError):
    """A caller violated a documented precondition."""


class DataError(ExplainOptError):
    """Input data could not be read or failed validation."""


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    pass


class InfeasibleError(ExplainOptError):
    exit_code = 3


class BudgetExceededError(ExplainOptError):
    exit_code = 3

    def __init__(self, message, required=None, budget=None):
        super().__init__(message)
        self.required = required
        self.budget = budget
