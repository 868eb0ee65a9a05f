"""Independent reference routines used by the tests (finite differences, recounts)."""

import numpy as np

from apiattack import gan, nn_core


def central_difference(loss, params, h=1e-5):
    """Numerical gradient of ``loss()`` w.r.t. every entry of every array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss()
            p[i] = old - h
            down = loss()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_errors(analytic, numeric):
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)


def random_mlp(rng):
    """Up to 3 layers, up to 20 units, random activations, softmax head."""
    n_layers = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 21)) for _ in range(n_layers)]
    dims[-1] = int(rng.integers(2, 6))
    act = str(rng.choice(["sigmoid", "tanh", "relu"]))
    layers = nn_core.build_layers(int(rng.integers(1, 11)), dims[:-1], dims[-1], act, "softmax")
    return nn_core.MlpModel.initialize(layers, rng, weight_scale=float(rng.uniform(0.5, 2.0)))


def mlp_case(rng):
    """(analytic, numeric) gradients for the mean cross-entropy of a random MLP."""
    model = random_mlp(rng)
    X = rng.normal(size=(int(rng.integers(1, 6)), model.input_dim))
    y = rng.integers(0, model.output_dim, len(X))
    analytic = nn_core.backward(model, X, y)

    def loss():
        P = nn_core.forward(model, X)
        return float(np.mean([-np.log(max(P[i, y[i]], nn_core.PROB_FLOOR)) for i in range(len(y))]))

    return analytic, central_difference(loss, model.params())


def gan_case(rng):
    """(analytic, numeric) gradients of both GAN losses on a toy pair."""
    feat = int(rng.integers(2, 6))
    cfg = gan.GanConfig(noise_dim=int(rng.integers(2, 6)), generator_hidden=(8, 8),
                        discriminator_hidden=(8, 8), epochs=1, batch_size=4)
    G, D = gan.build_pair_models(feat, cfg, rng)
    n = 4
    z = rng.normal(size=(n, cfg.noise_dim))
    y = gan.one_hot(rng.integers(1, 3, n))
    real = rng.uniform(-1, 1, (n, feat))
    fake = gan.generate(G, z, y)

    _, d_analytic = gan.discriminator_gradients(D, real, fake, y, y)

    def d_loss():
        dr = nn_core.forward(D, np.hstack([real, y]))[:, 0]
        df = nn_core.forward(D, np.hstack([fake, y]))[:, 0]
        return -float(np.mean(np.log(dr)) + np.mean(np.log(1 - df)))

    _, g_analytic = gan.generator_gradients(G, D, z, y)

    def g_loss():
        f = gan.generate(G, z, y)
        return -float(np.mean(np.log(nn_core.forward(D, np.hstack([f, y]))[:, 0])))

    return (d_analytic, central_difference(d_loss, D.params()),
            g_analytic, central_difference(g_loss, G.params()))


def brute_divergence(ref, cand):
    """Plain loop recount of (n1, n2, m1, m2)."""
    n1 = n2 = m1 = m2 = 0
    for r, c in zip(ref, cand):
        if r == 1:
            n1 += 1
            if c != 1:
                m1 += 1
        else:
            n2 += 1
            if c != 2:
                m2 += 1
    return n1, n2, m1, m2
