"""Error taxonomy: recipe problems vs problems with the data files."""


class RecipeError(ValueError):
    """The recipe document itself is malformed or references missing files."""


class DataError(ValueError):
    """An input table exists but cannot support the requested figure."""


class MissingColumn(DataError):
    def __init__(self, path, column):
        super().__init__(f"{path} has no column '{column}'")
        self.path = path
        self.column = column


class EmptyData(DataError):
    def __init__(self, path, detail="no data rows"):
        super().__init__(f"{path}: {detail}")
        self.path = path
