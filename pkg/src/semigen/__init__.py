"""Semi-implicit generators: maximum-likelihood training of implicit mixing
distributions, GAN-SI regularized adversarial training, mode-coverage metrics
and numerical checks of the accompanying theory."""

__version__ = "0.1.0"
