"""Exception hierarchy shared by all wlsynth modules."""


class WlsynthError(Exception):
    """Base class; the CLI maps these to exit code 1 (input error)."""


class GrammarError(WlsynthError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class CyclicForeignKey(WlsynthError):
    def __init__(self, tables):
        self.tables = tuple(tables)
        super().__init__("cyclic foreign-key references among: " + ", ".join(self.tables))


class UnknownColumn(WlsynthError):
    def __init__(self, ref):
        self.ref = ref
        super().__init__(f"unknown column or table: {ref}")


class PlaceholderMismatch(WlsynthError):
    def __init__(self, op_index, placeholders, slots):
        self.op_index = op_index
        super().__init__(
            f"operation {op_index}: {placeholders} placeholders but {slots} declared parameters"
        )


class MalformedRecord(WlsynthError):
    def __init__(self, line_no, reason):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"trace line {line_no}: {reason}")


class TypeMismatch(WlsynthError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        super().__init__(f"row {row}: value {value!r} does not fit column {column}")


class EmptyInput(WlsynthError):
    pass


class EmptyTrace(EmptyInput):
    pass


class EmptyValues(EmptyInput):
    pass


class UnresolvableComposite(WlsynthError):
    def __init__(self, table, columns):
        self.table = table
        self.columns = tuple(columns)
        super().__init__(
            f"table {table}: composite primary key has {len(self.columns)} non-foreign-key "
            f"columns ({', '.join(self.columns)}); exactly one is supported"
        )


class TemplateMismatch(WlsynthError):
    pass


class MissingSource(WlsynthError):
    def __init__(self, ref):
        self.ref = ref
        super().__init__(f"dependency source {ref} has no value in the current transaction")


class UnresolvedKey(WlsynthError):
    def __init__(self, template, op_index):
        super().__init__(f"{template} op {op_index}: no key-bound parameter to derive a record key")
