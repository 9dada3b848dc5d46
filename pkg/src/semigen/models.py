"""Generator and discriminator MLPs, explicit observation models, checkpoints."""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad

OUTPUT_TRANSFORMS = ("identity", "softplus", "sigmoid")
POISSON_FLOOR = 1e-6


class MlpNetwork:
    """Fully connected relu network with an optional output transform.

    Parameters are stored in declaration order ``layer{i}.weight``,
    ``layer{i}.bias``; weights are ``(fan_in, fan_out)``.
    """

    def __init__(self, widths, output="identity", rng=None, name="net"):
        if len(widths) < 2 or any(int(w) < 1 for w in widths):
            raise ValueError(f"invalid layer widths {widths}")
        if output not in OUTPUT_TRANSFORMS:
            raise ValueError(f"unknown output transform {output!r}")
        self.widths = [int(w) for w in widths]
        self.output = output
        self.name = name
        self.params = []
        n_layers = len(self.widths) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            # He init for relu layers, variance 1/fan_in for the output layer
            scale = math.sqrt((1.0 if i == n_layers - 1 else 2.0) / fan_in)
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = scale * rng.standard_normal((fan_in, fan_out))
            self.params.append(ad.parameter(w, name=f"{name}.layer{i}.weight"))
            self.params.append(ad.parameter(np.zeros(fan_out), name=f"{name}.layer{i}.bias"))

    @property
    def n_params(self):
        return sum(p.value.size for p in self.params)

    def __call__(self, x):
        h = ad.constant(x)
        if h.ndim != 2 or h.shape[1] != self.widths[0]:
            raise ad.ShapeError(f"{self.name}: input shape {h.shape} does not match width {self.widths[0]}")
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = ad.relu(h)
        if self.output == "softplus":
            h = ad.softplus(h) + POISSON_FLOOR
        elif self.output == "sigmoid":
            h = ad.sigmoid(h)
        return h

    def predict(self, x):
        """Forward pass on plain arrays, without recording a graph."""
        h = self.preactivations(x)[-1]
        if self.output == "softplus":
            h = np.logaddexp(0.0, h) + POISSON_FLOOR
        elif self.output == "sigmoid":
            h = np.exp(-np.logaddexp(0.0, -h))
        return h

    def preactivations(self, x):
        """Pre-activation arrays of every layer for input ``x`` (no graph)."""
        h = np.asarray(x, dtype=np.float64)
        out = []
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i].value + self.params[2 * i + 1].value
            out.append(h)
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
        return out

    def get_flat(self):
        return np.concatenate([p.value.ravel() for p in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"{self.name}: expected {self.n_params} parameters, got {flat.size}")
        offset = 0
        for p in self.params:
            n = p.value.size
            p.value = flat[offset:offset + n].reshape(p.shape).copy()
            offset += n

    def architecture(self):
        return {"widths": self.widths, "output": self.output, "name": self.name}


def make_generator(noise_dim=10, hidden=(100, 100), out_dim=2, output="identity", rng=None):
    return MlpNetwork([noise_dim, *hidden, out_dim], output=output, rng=rng, name="generator")


def make_discriminator(in_dim=2, hidden=(100,), rng=None):
    return MlpNetwork([in_dim, *hidden, 1], output="identity", rng=rng, name="discriminator")


def generate_theta(gen, z):
    """Mixing-variable draws ``theta = g(z)``; differentiable in the generator parameters."""
    return gen(z)


def discriminate(disc, x):
    """Raw logits of the discriminator, shape ``(N,)``."""
    out = disc(x)
    return ad.reshape(out, (out.shape[0],))


@dataclass(frozen=True)
class ObservationModel:
    """Explicit conditional ``p(x | theta)``: isotropic Gaussian or Poisson."""

    kind: str = "gaussian"
    sigma: float = 0.1
    dim: int = 2

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise ValueError(f"unknown observation model {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError(f"gaussian observation model needs sigma > 0, got {self.sigma}")
        if self.kind == "poisson" and self.dim != 1:
            raise ValueError("poisson observation model is one-dimensional")

    def to_dict(self):
        return {"kind": self.kind, "sigma": self.sigma, "dim": self.dim}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "gaussian"), sigma=float(d.get("sigma", 0.1)), dim=int(d.get("dim", 2)))


def _check_counts(x):
    if np.any(x < 0) or np.any(x != np.floor(x)):
        raise ValueError("poisson observations must be nonnegative integers")


def log_obs_density(obs, x, theta):
    """Matrix ``L[i, j] = log p(x_i | theta_j)`` as a graph tensor of shape (N, M)."""
    x, theta = ad.constant(x), ad.constant(theta)
    if obs.kind == "gaussian":
        xv = x.value.reshape(x.shape[0], -1)
        if theta.ndim != 2 or xv.shape[1] != theta.shape[1]:
            raise ad.ShapeError(f"log_obs_density: incompatible shapes {x.shape} and {theta.shape}")
        d = xv.shape[1]
        n, m = xv.shape[0], theta.shape[0]
        diff = ad.reshape(x, (n, 1, d)) - ad.reshape(theta, (1, m, d))
        sq = ad.sum(ad.square(diff), axis=2)
        norm = -0.5 * d * math.log(2 * math.pi * obs.sigma ** 2)
        return sq * (-0.5 / obs.sigma ** 2) + norm
    xv = x.value.reshape(-1)
    _check_counts(xv)
    t = ad.reshape(theta, (1, theta.value.size))
    xcol = xv[:, None]
    return xcol * ad.log(t) - t - special.gammaln(xcol + 1.0)


def sample_x(obs, theta, rng):
    """Draw ``x ~ p(x | theta)`` row by row."""
    theta = np.asarray(theta.value if isinstance(theta, ad.Tensor) else theta, dtype=np.float64)
    if obs.kind == "gaussian":
        return theta + obs.sigma * rng.standard_normal(theta.shape)
    if np.any(theta <= 0):
        raise ValueError("poisson rates must be strictly positive")
    return rng.poisson(theta).astype(np.int64)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path_prefix, manifest, arrays):
    """Write ``<prefix>.json`` and ``<prefix>.bin``.

    ``arrays`` is an ordered list of ``(name, array)``; the blob is their
    concatenation as little-endian float64 in that order, and the manifest
    records names, shapes and offsets.
    """
    layout = []
    offset = 0
    chunks = []
    for name, arr in arrays:
        arr = np.asarray(arr, dtype="<f8")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.ravel())
    blob = np.concatenate(chunks).astype("<f8").tobytes() if chunks else b""
    manifest = dict(manifest)
    manifest["layout"] = layout
    manifest["blob_sha256"] = hashlib.sha256(blob).hexdigest()
    with open(f"{path_prefix}.bin", "wb") as fh:
        fh.write(blob)
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def load_checkpoint(path_prefix):
    """Return ``(manifest, {name: array})``."""
    if path_prefix.endswith(".json") or path_prefix.endswith(".bin"):
        path_prefix = path_prefix[:-5] if path_prefix.endswith(".json") else path_prefix[:-4]
    with open(f"{path_prefix}.json") as fh:
        manifest = json.load(fh)
    flat = np.fromfile(f"{path_prefix}.bin", dtype="<f8")
    arrays = {}
    for entry in manifest["layout"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).astype(np.float64)
    return manifest, arrays
