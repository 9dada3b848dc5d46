"""Seeded noise and synthetic data sources with their ground-truth structure."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

DISCRETE_KINDS = ("negbin", "pois-negbin-mix")
CONTINUOUS_KINDS = ("ring-noise", "gmm-grid", "gmm-ring")
KINDS = DISCRETE_KINDS + CONTINUOUS_KINDS


def make_rng(seed, *keys):
    """PCG64 generator for ``seed``; extra integer keys select an independent sub-stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


# Sub-stream keys used throughout; fixed so that runs are reproducible.
STREAM_DATA = 1
STREAM_GEN_INIT = 2
STREAM_DISC_INIT = 3
STREAM_TRAIN = 4
STREAM_EVAL = 5


@dataclass
class DatasetSpec:
    """A synthetic data source and the ground truth needed to evaluate against it."""

    kind: str
    params: dict = field(default_factory=dict)
    centers: list = field(default_factory=list)
    sigma: float = 0.0
    weights: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")

    @property
    def discrete(self):
        return self.kind in DISCRETE_KINDS

    @property
    def dim(self):
        return 1 if self.discrete else 2

    @property
    def center_array(self):
        return np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)

    @property
    def n_modes(self):
        return len(self.centers)

    def true_pmf(self, k):
        """Probability mass at the nonnegative integers ``k`` (discrete kinds only)."""
        if not self.discrete:
            raise ValueError(f"{self.kind} is continuous and has no pmf")
        k = np.asarray(k, dtype=np.float64)
        p = self.params
        if self.kind == "negbin":
            return negbin_pmf(k, p["r"], p["p"])
        w = p["mix_weight"]
        return w * poisson_pmf(k, p["poisson_rate"]) + (1 - w) * negbin_pmf(k, p["r"], p["p"])

    def sample(self, rng, count):
        return SAMPLERS[self.kind](rng, count, self)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], params=dict(d.get("params", {})), centers=list(d.get("centers", [])),
                   sigma=float(d.get("sigma", 0.0)), weights=list(d.get("weights", [])))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def negbin_pmf(k, r, p):
    k = np.asarray(k, dtype=np.float64)
    logp = (special.gammaln(k + r) - special.gammaln(k + 1) - special.gammaln(r)
            + r * math.log(p) + k * math.log1p(-p))
    return np.exp(logp)


def poisson_pmf(k, rate):
    k = np.asarray(k, dtype=np.float64)
    return np.exp(k * math.log(rate) - rate - special.gammaln(k + 1))


# ---------------------------------------------------------------- spec constructors

def negbin_spec(r=2.0, p=0.5):
    return DatasetSpec("negbin", params={"r": r, "p": p})


def pois_negbin_mix_spec(rate=10.0, r=0.2, p=0.9, mix_weight=0.5):
    return DatasetSpec("pois-negbin-mix",
                       params={"poisson_rate": rate, "r": r, "p": p, "mix_weight": mix_weight})


def gmm_grid_spec(side=5, spacing=2.0, sigma=0.05):
    coords = (np.arange(side) - (side - 1) / 2) * spacing
    centers = [[float(a), float(b)] for a in coords for b in coords]
    k = len(centers)
    return DatasetSpec("gmm-grid", params={"side": side, "spacing": spacing},
                       centers=centers, sigma=sigma, weights=[1.0 / k] * k)


def gmm_ring_spec(n_modes=8, radius=2.0, sigma=0.05):
    angles = 2 * np.pi * np.arange(n_modes) / n_modes
    centers = [[float(radius * np.cos(a)), float(radius * np.sin(a))] for a in angles]
    return DatasetSpec("gmm-ring", params={"radius": radius}, centers=centers, sigma=sigma,
                       weights=[1.0 / n_modes] * n_modes)


def ring_noise_spec(radius=2.0, sigma=0.05):
    return DatasetSpec("ring-noise", params={"radius": radius}, sigma=sigma)


SPECS = {
    "negbin": negbin_spec,
    "pois-negbin-mix": pois_negbin_mix_spec,
    "gmm-grid": gmm_grid_spec,
    "gmm-ring": gmm_ring_spec,
    "ring-noise": ring_noise_spec,
}


def make_spec(kind, **params):
    if kind not in SPECS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    return SPECS[kind](**params)


# ---------------------------------------------------------------- samplers

def sample_noise(rng, count, dim=10):
    """``count`` i.i.d. standard-normal rows of width ``dim``."""
    if dim < 1 or count < 0:
        raise ValueError(f"invalid noise shape ({count}, {dim})")
    return rng.standard_normal((count, dim))


def sample_negbin(rng, r=2.0, p=0.5, count=1):
    """Negative binomial draws through the Poisson-Gamma mixture.

    The rate is Gamma with shape ``r`` and scale ``(1 - p) / p``; for r=2,
    p=0.5 that is Gamma(2, 1).
    """
    if r <= 0 or not 0 < p < 1:
        raise ValueError(f"invalid negative binomial parameters r={r}, p={p}")
    rates = rng.gamma(shape=r, scale=(1 - p) / p, size=count)
    return rng.poisson(rates).astype(np.int64)


def sample_pois_negbin_mix(rng, count, rate=10.0, r=0.2, p=0.9, mix_weight=0.5, return_component=False):
    """Fair-coin mixture of Poisson(rate) and NB(r, p); component 1 is the Poisson."""
    comp = rng.random(count) < mix_weight
    pois = rng.poisson(rate, size=count)
    nb = sample_negbin(rng, r, p, count)
    out = np.where(comp, pois, nb).astype(np.int64)
    if return_component:
        return out, comp
    return out


def _sample_mixture(rng, count, centers, sigma):
    labels = rng.integers(0, len(centers), size=count)
    return centers[labels] + sigma * rng.standard_normal((count, 2))


def sample_gmm_grid(rng, count, spec=None):
    spec = spec or gmm_grid_spec()
    return _sample_mixture(rng, count, spec.center_array, spec.sigma)


def sample_gmm_ring(rng, count, spec=None):
    spec = spec or gmm_ring_spec()
    return _sample_mixture(rng, count, spec.center_array, spec.sigma)


def sample_ring_noise(rng, count, spec=None):
    spec = spec or ring_noise_spec()
    radius = spec.params["radius"]
    angle = rng.uniform(0.0, 2 * np.pi, size=count)
    ring = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return ring + spec.sigma * rng.standard_normal((count, 2))


SAMPLERS = {
    "negbin": lambda rng, n, s: sample_negbin(rng, s.params["r"], s.params["p"], n),
    "pois-negbin-mix": lambda rng, n, s: sample_pois_negbin_mix(
        rng, n, s.params["poisson_rate"], s.params["r"], s.params["p"], s.params["mix_weight"]),
    "gmm-grid": lambda rng, n, s: sample_gmm_grid(rng, n, s),
    "gmm-ring": lambda rng, n, s: sample_gmm_ring(rng, n, s),
    "ring-noise": lambda rng, n, s: sample_ring_noise(rng, n, s),
}


def separation(spec):
    """``(c0, eps0)``: minimum inter-center distance and the 3-sigma ball diameter."""
    c = spec.center_array
    d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    d[np.diag_indices(len(c))] = np.inf
    return float(d.min()), 6.0 * spec.sigma


def write_samples_csv(path, samples):
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    cols = ["x"] if samples.shape[1] == 1 else [f"x{i}" for i in range(samples.shape[1])]
    integer = np.issubdtype(samples.dtype, np.integer)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in samples:
            if integer:
                fh.write(",".join(str(int(v)) for v in row) + "\n")
            else:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_samples_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not rows:
        return np.zeros((0, len(header)))
    arr = np.array(rows, dtype=np.float64)
    return arr
