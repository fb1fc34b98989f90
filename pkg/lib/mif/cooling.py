from collections import namedtuple

__all__ = ['CoolingSchedule', 'cooling_multiplier']


class CoolingSchedule(namedtuple("CoolingSchedule", ["type", "fraction_50"])):
    """Shrinks random-walk intensities over iterations; multiplier(50) == fraction_50.

    geometric:  rho^m with rho = fraction_50^(1/50)
    hyperbolic: c / (c + m) with c = 50 fraction_50 / (1 - fraction_50)
    """
    __slots__ = ()

    def __new__(cls, type="geometric", fraction_50=0.5):
        if type not in ("geometric", "hyperbolic"):
            raise ValueError("cooling type must be 'geometric' or 'hyperbolic', got '{}'".format(type))
        fraction_50 = float(fraction_50)
        if not 0 < fraction_50 <= 1:
            raise ValueError("cooling fraction must lie in (0, 1], got {}".format(fraction_50))
        return super(CoolingSchedule, cls).__new__(cls, type, fraction_50)

    def multiplier(self, m):
        if m < 0:
            raise ValueError("iteration must be >= 0, got {}".format(m))
        if self.fraction_50 == 1.0:
            return 1.0
        if self.type == "geometric":
            return (self.fraction_50 ** (1.0 / 50)) ** m
        c = 50.0 * self.fraction_50 / (1.0 - self.fraction_50)
        return c / (c + m)

    def describe(self):
        return {"type": self.type, "fraction_50": self.fraction_50}


def cooling_multiplier(s, m):
    return s.multiplier(m)
