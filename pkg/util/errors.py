class PanelPompError(RuntimeError):
    pass


class NameFormatError(PanelPompError, ValueError):
    pass


class UnknownParameterError(PanelPompError, KeyError):
    def __str__(self):
        # KeyError quotes its argument
        return RuntimeError.__str__(self)


class TransformDomainError(PanelPompError, ValueError):
    def __init__(self, name, message):
        self.name = name
        self.detail = message
        super(TransformDomainError, self).__init__("parameter '{}': {}".format(name, message))

    def __reduce__(self):
        return (TransformDomainError, (self.name, self.detail))


class BoundsError(PanelPompError, ValueError):
    pass


class ConstructionError(PanelPompError):
    pass


class CapabilityError(PanelPompError):
    pass


class DomainError(PanelPompError, ValueError):
    pass


class DegenerateMeasurementError(PanelPompError, ValueError):
    pass


class FilteringFailure(PanelPompError):
    """All particle weights vanished (zero, NaN or infinite) at one observation."""

    def __init__(self, unit=None, time_index=None, message="all particle weights are zero or non-finite"):
        self.unit = unit
        self.time_index = time_index
        self.message = message
        super(FilteringFailure, self).__init__(self._format())

    def _format(self):
        where = []
        if self.unit is not None:
            where.append("unit '{}'".format(self.unit))
        if self.time_index is not None:
            where.append("time index {}".format(self.time_index))
        if not where:
            return self.message
        return "{} at {}".format(self.message, ", ".join(where))

    def at(self, unit, time_index):
        return FilteringFailure(unit=unit, time_index=time_index, message=self.message)

    def __reduce__(self):
        return (FilteringFailure, (self.unit, self.time_index, self.message))


class MifFailure(PanelPompError):
    def __init__(self, nfail, max_fail, failures=()):
        self.nfail = nfail
        self.max_fail = max_fail
        self.failures = tuple(failures)
        super(MifFailure, self).__init__(
            "{} filtering failures exceed max_fail={} (first: {})".format(
                nfail, max_fail, ", ".join("{}@{}".format(u, n) for u, n in self.failures[:5])))

    def __reduce__(self):
        return (MifFailure, (self.nfail, self.max_fail, self.failures))


class SmoothingError(PanelPompError, ValueError):
    pass


class ConfigError(PanelPompError, ValueError):
    pass
