"""Error type shared by every module."""


class LaclError(ValueError):
    """Raised on contract violations.

    ``code`` is a short stable tag (e.g. ``"degenerate-vector"``) that callers
    and tests can match on; the message always starts with it.
    """

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)
