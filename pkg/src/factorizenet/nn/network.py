import numpy as np

from . import functional as F
from .layers import LayerKind, layer_from_description


class Network:
    """A fixed sequence of layers ending in a SoftmaxOutput.

    ``forward`` returns logits (the input to the softmax); ``predict_proba``
    applies the terminal softmax.
    """

    def __init__(self, layers, plan=None):
        self.layers = list(layers)
        self.plan = plan
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self._index = {layer.name: layer for layer in self.layers}

    def __getitem__(self, name):
        return self._index[name]

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    @property
    def body(self):
        """All layers except a trailing SoftmaxOutput."""
        if self.layers and self.layers[-1].kind is LayerKind.SOFTMAX:
            return self.layers[:-1]
        return self.layers

    @property
    def dtype(self):
        for layer in self.layers:
            for p in layer.params.values():
                return p.dtype
        return np.dtype(np.float32)

    def forward(self, x, train=False, observer=None):
        """Run to the logits. ``observer(layer, output)`` is called after every layer."""
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.body:
            x = layer.forward(x, train=train)
            if observer is not None:
                observer(layer, x)
        return x

    def backward(self, grad_logits):
        g = grad_logits
        for layer in reversed(self.body):
            g = layer.backward(g)
        return g

    def loss_and_grad(self, x, labels):
        """Forward in train mode, softmax cross-entropy, backward. Returns ``(loss, logits)``."""
        logits = self.forward(x, train=True)
        loss, probs = F.softmax_crossentropy(logits, labels)
        self.backward(F.softmax_crossentropy_backward(probs, labels).astype(logits.dtype))
        return loss, logits

    def predict_logits(self, x, batch_size=256):
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def predict_proba(self, x, batch_size=256):
        return F.softmax(self.predict_logits(x, batch_size))

    def first_nonfinite(self, x, train=False):
        """Name of the first layer whose output contains NaN/Inf, or None."""
        found = []

        def check(layer, out):
            if not found and not np.all(np.isfinite(out)):
                found.append(layer.name)

        with np.errstate(all="ignore"):
            self.forward(x, train=train, observer=check)
        return found[0] if found else None

    def trainable(self):
        """Yield ``(layer, key)`` for every trainable parameter in network order."""
        for layer in self.layers:
            for key in layer.params:
                yield layer, key

    def state_items(self):
        """Yield ``(qualified_name, array)`` for parameters and buffers in a stable order."""
        for layer in self.layers:
            for key in sorted(layer.params):
                yield f"{layer.name}.{key}", layer.params[key]
            for key in sorted(layer.buffers):
                yield f"{layer.name}.{key}", layer.buffers[key]

    def set_state(self, name, value):
        layer_name, key = name.rsplit(".", 1)
        layer = self._index[layer_name]
        store = layer.params if key in layer.params else layer.buffers
        if key not in store:
            raise KeyError(name)
        if store[key].shape != value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {store[key].shape}")
        store[key] = value.astype(store[key].dtype)

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def copy(self):
        clone = Network([layer_from_description(layer.describe(), self.dtype) for layer in self.layers], self.plan)
        for name, value in self.state_items():
            clone.set_state(name, value.copy())
        return clone

    def describe(self):
        return [layer.describe() for layer in self.layers]
