"""Named parameter storage, initialisers and seeded RNG streams."""
import numpy as np

from .tensor import Tensor, get_default_dtype

# fixed ids so a stream's content never depends on creation order
STREAMS = {"data": 0, "init": 1, "dropout": 2, "shuffle": 3, "gradcheck": 4}


def stream(seed, name, *extra):
    """Independent generator for the named sub-stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],) + tuple(int(e) for e in extra))
    return np.random.Generator(np.random.PCG64(ss))


def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) redrawn outside +-2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class ParameterStore:
    """Ordered name -> Tensor mapping plus Adam moment buffers.

    Layers register their tensors here under dotted names; the store is the
    unit that the optimiser updates and checkpoints serialise.
    """

    def __init__(self, dtype=None):
        self.dtype = np.dtype(dtype or get_default_dtype())
        self._params = {}
        self.adam_m = {}
        self.adam_v = {}
        self.step = 0

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        return t

    def weight(self, name, rng, shape, std=0.02):
        return self.add(name, trunc_normal(rng, shape, std))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def shapes(self):
        return {k: v.shape for k, v in self._params.items()}

    def count(self):
        """Total number of scalar parameters."""
        return int(sum(v.data.size for v in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def fill(self, value):
        """Set every parameter to ``value`` (testing aid)."""
        for t in self._params.values():
            t.data[...] = value

    def state_arrays(self):
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays):
        for k, v in arrays.items():
            self._params[k].data[...] = v
