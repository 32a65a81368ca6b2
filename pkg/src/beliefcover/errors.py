"""Exception hierarchy shared by every module."""


class BeliefCoverError(Exception):
    """Base class for all package errors."""


class NonStochasticRow(BeliefCoverError, ValueError):
    def __init__(self, kind, index, total=None):
        self.kind = kind
        self.index = index
        detail = f" (sum={total!r})" if total is not None else ""
        super().__init__(f"{kind} row {index} is not a probability vector{detail}")


class RewardOutOfRange(BeliefCoverError, ValueError):
    pass


class BadDiscount(BeliefCoverError, ValueError):
    pass


class UnreachableObservation(BeliefCoverError, ValueError):
    """The observation has zero probability under the current belief."""


class TreeTooLarge(BeliefCoverError, RuntimeError):
    pass


class SupportViolation(BeliefCoverError, ValueError):
    pass


class DanglingFrontier(BeliefCoverError, RuntimeError):
    pass


class DomainMismatch(BeliefCoverError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "domain mismatch"


class SchemaMismatch(BeliefCoverError, ValueError):
    pass


class HashMismatch(BeliefCoverError, ValueError):
    pass


class UnknownLemma(BeliefCoverError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown lemma"


class BadSpec(BeliefCoverError, ValueError):
    pass
