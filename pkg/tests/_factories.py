"""Random networks, stacks and batches shared by the kernel tests."""

import numpy as np

from amerbsde.market import MarketParams, PayoffSpec, smoothed_payoff
from amerbsde.netcore import INFER, TRAIN, EnsembleModel, FeatureBatch, TimestepNet, remainder_forward


def random_net(rng, d=2, width=4, L=2, n=0, eta=1):
    net = TimestepNet(d, width, L, n=n, eta=eta).init_uniform(rng)
    p = net.p
    for l in range(1, L + 1):
        p[f"gamma{l}"][:] = rng.uniform(0.5, 1.5, width)
        p[f"beta{l}"][:] = rng.normal(0, 0.3, width)
    p["gamma0"][:] = rng.uniform(0.5, 1.5, d + 2)
    p["beta0"][:] = rng.normal(0, 0.3, d + 2)
    p["omega"][:] = rng.normal(0, 1.0, width)
    p["b"][:] = rng.normal()
    p["alpha"][:] = rng.uniform(0.8, 1.2)
    return net


def random_batch(rng, spec, d, B, spread=10.0):
    s = 100.0 + spread * rng.standard_normal((B, d))
    y = rng.uniform(1.0, 10.0, B)
    gy = rng.uniform(0.0, 0.5, (B, d))
    return FeatureBatch.build(spec, s, y, gy)


def calibrate(net, batch):
    """Input statistics from the batch, running statistics from one TRAIN pass."""
    net.set_input_stats(batch.z0())
    _, _, cache = remainder_forward(net, batch, TRAIN)
    for l, (mu, sig) in enumerate(cache.stats, start=1):
        net.buf[f"mu{l}"][:] = mu
        net.buf[f"sig{l}"][:] = sig * rng_scale(l)
    return net


def rng_scale(l):
    return 1.0 + 0.1 * l


def random_stack(rng, d=3, N=8, J=4, C=1, width=None, L=2, spec=None, samples=64):
    mp = MarketParams(d=d, r=0.03, delta=0.01, sigma=0.25, rho=0.4, T=1.0, K=100.0, s0=100.0)
    spec = spec or PayoffSpec("geometric_call", 100.0)
    model = EnsembleModel(mp, spec, N, J, kappa=2.0 * N / mp.T, C=C, L=L, width=width)
    s = 100.0 + 15.0 * rng.standard_normal((samples, d))
    for n in range(N - 1, -1, -1):
        for c in range(C):
            net = random_net(rng, d, model.width, L, n=n, eta=model.eta(n))
            model.members[c][n] = net
        parent = n + model.eta(n)
        if parent == N:
            y, gy = smoothed_payoff(spec, s, model.kappa)
        else:
            y, gy = model.value_and_delta(parent, s)
        batch = FeatureBatch.build(spec, s, y, gy)
        for c in range(C):
            calibrate(model.members[c][n], batch)
    return model


__all__ = ["random_net", "random_batch", "calibrate", "random_stack", "INFER", "TRAIN"]
