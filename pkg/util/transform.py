import torch

from util.errors import TransformDomainError


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(x, dtype=torch.float64)


class Identity(object):
    kind = "identity"

    def __init__(self, names):
        self.names = tuple(names)

    def to_est(self, values):
        return {n: _as_tensor(values[n]) for n in self.names}

    def from_est(self, values):
        return {n: _as_tensor(values[n]) for n in self.names}

    def describe(self):
        return {self.kind: list(self.names)}


class Log(Identity):
    # Positive parameters: h(x) = log x.
    kind = "log"

    def to_est(self, values):
        out = {}
        for n in self.names:
            x = _as_tensor(values[n])
            if not bool(torch.all(x > 0)):
                raise TransformDomainError(n, "log transform needs strictly positive values, got {}".format(x.min().item()))
            out[n] = torch.log(x)
        return out

    def from_est(self, values):
        return {n: torch.exp(_as_tensor(values[n])) for n in self.names}


class Logit(Identity):
    # Parameters in (0, 1): h(x) = log(x / (1 - x)).
    kind = "logit"

    def to_est(self, values):
        out = {}
        for n in self.names:
            x = _as_tensor(values[n])
            if not bool(torch.all((x > 0) & (x < 1))):
                raise TransformDomainError(n, "logit transform needs values in (0, 1)")
            out[n] = torch.logit(x)
        return out

    def from_est(self, values):
        return {n: torch.sigmoid(_as_tensor(values[n])) for n in self.names}


class Barycentric(Identity):
    """A group of positive parameters constrained to sum to one.

    The estimation scale is the log of each member; mapping back renormalizes
    the group, so any estimation-scale vector lands on the simplex.
    """
    kind = "barycentric"

    def __init__(self, names, group=None):
        super(Barycentric, self).__init__(names)
        assert len(self.names) >= 2, "a barycentric group needs at least two members"
        self.group = group if group is not None else "+".join(self.names)

    def to_est(self, values):
        xs = [_as_tensor(values[n]) for n in self.names]
        for n, x in zip(self.names, xs):
            if not bool(torch.all(x > 0)):
                raise TransformDomainError(n, "barycentric group '{}' needs positive members".format(self.group))
        total = sum(xs)
        if not bool(torch.all(torch.abs(total - 1.0) <= 1e-8)):
            raise TransformDomainError(self.names[0], "barycentric group '{}' must sum to 1".format(self.group))
        return {n: torch.log(x) for n, x in zip(self.names, xs)}

    def from_est(self, values):
        z = torch.stack([_as_tensor(values[n]) for n in self.names], dim=0)
        z = z - torch.max(z, dim=0, keepdim=True).values
        e = torch.exp(z)
        x = e / torch.sum(e, dim=0, keepdim=True)
        return {n: x[i] for i, n in enumerate(self.names)}

    def describe(self):
        return {self.kind: {self.group: list(self.names)}}


class Custom(Identity):
    kind = "custom"

    def __init__(self, name, to_est, from_est):
        super(Custom, self).__init__([name])
        self._to_est = to_est
        self._from_est = from_est

    def to_est(self, values):
        n = self.names[0]
        z = _as_tensor(self._to_est(_as_tensor(values[n])))
        if not bool(torch.all(torch.isfinite(z))):
            raise TransformDomainError(n, "custom transform produced non-finite values")
        return {n: z}

    def from_est(self, values):
        n = self.names[0]
        return {n: _as_tensor(self._from_est(_as_tensor(values[n])))}

    def describe(self):
        return {self.kind: list(self.names)}


class ParTrans(object):
    """Composes per-parameter transforms, keyed by base parameter name.

    ``ParTrans(log=["K", "r"], logit=["rho"], barycentric={"g": ["a", "b", "c"]},
    custom={"x": (to_est, from_est)})``. Parameters not listed are on the
    identity scale. Values passed in are tensors of any common shape, so the
    same object transforms a single parameter set or a whole swarm.
    """

    def __init__(self, log=(), logit=(), barycentric=None, custom=None):
        self.transforms = []
        seen = set()

        def claim(names):
            for n in names:
                if n in seen:
                    raise ValueError("parameter '{}' has more than one transform".format(n))
                seen.add(n)

        # elementwise transforms act name by name; only barycentric members travel together
        claim(log)
        self.transforms.extend(Log([n]) for n in log)
        claim(logit)
        self.transforms.extend(Logit([n]) for n in logit)
        for group, names in (barycentric or {}).items():
            claim(names)
            self.transforms.append(Barycentric(names, group=group))
        for name, (f, g) in (custom or {}).items():
            claim([name])
            self.transforms.append(Custom(name, f, g))
        self._by_name = {}
        for t in self.transforms:
            for n in t.names:
                self._by_name[n] = t

    def tag(self, name):
        t = self._by_name.get(name)
        return "identity" if t is None else t.kind

    def group_of(self, name):
        t = self._by_name.get(name)
        return t.names if t is not None else (name,)

    def _apply(self, values, forward, names=None):
        names = list(values) if names is None else list(names)
        out = {}
        done = set()
        for n in names:
            if n in done:
                continue
            t = self._by_name.get(n)
            if t is None:
                out[n] = _as_tensor(values[n])
                done.add(n)
                continue
            missing = [m for m in t.names if m not in values]
            if missing:
                raise ValueError("transform group of '{}' is incomplete, missing {}".format(n, missing))
            out.update(t.to_est(values) if forward else t.from_est(values))
            done.update(t.names)
        return out

    def to_est(self, values, names=None):
        return self._apply(values, True, names)

    def from_est(self, values, names=None):
        return self._apply(values, False, names)

    def describe(self):
        d = {}
        for t in self.transforms:
            for k, v in t.describe().items():
                if isinstance(v, dict):
                    d.setdefault(k, {}).update(v)
                else:
                    d.setdefault(k, []).extend(v)
        return d

    def __repr__(self):
        return "ParTrans({})".format(self.describe())
