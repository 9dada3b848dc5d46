"""Central finite-difference gradient oracle shared by the test modules."""

import numpy as np

from semigen import autodiff as ad


def numeric_grad(loss_fn, param, h=1e-4):
    """d loss_fn() / d param.value by central differences (loss_fn rebuilds the graph)."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = float(loss_fn().value)
        flat[i] = old - h
        down = float(loss_fn().value)
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(loss_fn, params, h=1e-4):
    """Worst relative error over every parameter entry."""
    grads = ad.backward(loss_fn())
    worst = 0.0
    for p in params:
        worst = max(worst, max_rel_error(grads[p], numeric_grad(loss_fn, p, h)))
    return worst


LOSS_KINDS = ("sig-gaussian-fused", "sig-gaussian-composed", "sig-poisson-fused", "sig-poisson-composed",
              "gan-disc", "gan-gen", "gan-si", "mse")


def _near_kink(net, inputs, margin):
    pre = net.preactivations(inputs)[:-1]
    return any(np.min(np.abs(a)) < margin for a in pre)


def random_config(rng, kind=None, margin=1e-3):
    """A random (loss_fn, params, description) triple for the finite-difference oracle.

    Configurations whose relu pre-activations sit within ``margin`` of the
    kink are redrawn: central differences straddling a kink are not an oracle.
    """
    from semigen.losses import gan_disc_loss, gan_gen_loss, gan_si_gen_loss, sig_loss_HM
    from semigen.models import MlpNetwork, ObservationModel, discriminate

    kind = kind or LOSS_KINDS[rng.integers(len(LOSS_KINDS))]
    while True:
        n_hidden = int(rng.integers(1, 3))
        hidden = [int(rng.integers(2, 7)) for _ in range(n_hidden)]
        noise_dim = int(rng.integers(1, 5))
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        z = rng.standard_normal((m, noise_dim))
        poisson = "poisson" in kind
        out_dim = 1 if poisson else int(rng.integers(1, 4))
        gen = MlpNetwork([noise_dim, *hidden, out_dim], output="softplus" if poisson else "identity", rng=rng,
                         name="g")
        for p in gen.params:
            p.value += 0.1 * rng.standard_normal(p.shape)
        if _near_kink(gen, z, margin):
            continue
        if poisson:
            x = rng.integers(0, 6, size=(n, 1)).astype(np.float64)
            obs = ObservationModel("poisson", dim=1)
        else:
            x = rng.standard_normal((n, out_dim))
            obs = ObservationModel("gaussian", sigma=float(rng.uniform(0.5, 2.0)), dim=out_dim)
        disc = MlpNetwork([out_dim, int(rng.integers(2, 6)), 1], rng=rng, name="d")
        theta0 = gen.predict(z)
        if _near_kink(disc, x, margin) or _near_kink(disc, theta0, margin):
            continue
        break

    fused = kind.endswith("fused")
    if kind.startswith("sig"):
        def loss_fn():
            return sig_loss_HM(obs, x, gen(z), fused=fused).tensor
        params = gen.params
    elif kind == "gan-disc":
        def loss_fn():
            return gan_disc_loss(discriminate(disc, x), discriminate(disc, gen(z))).tensor
        params = gen.params + disc.params
    elif kind == "gan-gen":
        def loss_fn():
            return gan_gen_loss(discriminate(disc, gen(z))).tensor
        params = gen.params
    elif kind == "gan-si":
        lam = float(rng.uniform(0.1, 2.0))

        def loss_fn():
            theta = gen(z)
            return gan_si_gen_loss(discriminate(disc, theta), obs, x, theta, lam).tensor
        params = gen.params
    else:
        target = rng.standard_normal((m, out_dim))

        def loss_fn():
            return ad.mean(ad.square(gen(z) - target))
        params = gen.params
    desc = f"{kind} gen={gen.widths} n={n} m={m}"
    return loss_fn, params, desc
