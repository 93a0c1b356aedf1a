"""Exception hierarchy.

Validation problems derive from :class:`InvalidSpec` (a ``ValueError``);
numerical failures derive from :class:`NumericalFailure`. The CLI maps the
first family to exit code 2 and the second to exit code 3.
"""


class MestlabError(Exception):
    pass


class InvalidSpec(MestlabError, ValueError):
    pass


class InvalidModel(InvalidSpec):
    pass


class EmptySample(InvalidSpec):
    pass


class NumericalFailure(MestlabError, ArithmeticError):
    pass


class RankDeficient(NumericalFailure):
    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class FactorizationFailure(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    def __init__(self, message, trace=None, result=None):
        super().__init__(message)
        self.trace = trace or []
        self.result = result


class TooManyFailures(NumericalFailure):
    pass
