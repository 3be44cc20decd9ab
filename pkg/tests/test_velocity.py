import inspect

import numpy as np
import pytest
import torch

from crysflow.crystal import Crystal, LatticeParams
from crysflow.training import make_batch, rfm_loss_batch
from crysflow.velocity import (
    DTYPE,
    PRESETS,
    NetConfig,
    VelocityNet,
    crystal_arrays,
    forward,
    gradient,
    load_checkpoint,
    save_checkpoint,
    sinusoidal_embedding,
)

from conftest import random_crystal

SMALL = NetConfig(hidden=8, time_dim=8, layers=2, n_freq=3)


def randomized(config=SMALL, seed=0):
    """A network whose zero-initialized heads are replaced by random weights."""
    net = VelocityNet(config, seed=seed)
    g = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for head in (net.coord_head, net.lattice_head):
            head[-1].weight.copy_(0.3 * torch.randn(head[-1].weight.shape, generator=g, dtype=DTYPE))
            head[-1].bias.copy_(0.3 * torch.randn(head[-1].bias.shape, generator=g, dtype=DTYPE))
    return net


def tensors(crystals, t):
    frac, lat, z = crystal_arrays(crystals)
    return (torch.as_tensor(frac, dtype=DTYPE), torch.as_tensor(lat, dtype=DTYPE), torch.as_tensor(z),
            torch.full((len(crystals),), t, dtype=DTYPE))


class TestEmbedding:
    def test_zero(self):
        e = sinusoidal_embedding(0.0, 4)
        assert np.array_equal(e[:5], np.zeros(5)) and np.array_equal(e[5:], np.ones(5))

    def test_quarter(self):
        e = sinusoidal_embedding(0.25, 2)
        assert np.allclose(e[:3], [0, 1, 0], atol=1e-15)
        assert np.allclose(e[3:], [1, 0, -1], atol=1e-15)

    def test_periodic(self, rng):
        x = rng.uniform(-3, 3, 100)
        assert np.allclose(sinusoidal_embedding(x, 10), sinusoidal_embedding(x + 1, 10), atol=1e-12)

    def test_torch_matches_numpy(self, rng):
        x = rng.random((4, 3))
        assert np.allclose(sinusoidal_embedding(torch.as_tensor(x), 5).numpy(), sinusoidal_embedding(x, 5))


class TestForward:
    def test_zero_heads_give_zero_field(self, rng):
        net = VelocityNet(SMALL)
        tv = forward(net, random_crystal(rng, 5), 0.3)
        assert np.all(tv.coord_tangent == 0) and np.all(tv.length_tangent == 0) and np.all(tv.angle_tangent == 0)

    def test_shapes(self, rng):
        tv = forward(randomized(), random_crystal(rng, 5), 0.3)
        assert tv.coord_tangent.shape == (5, 3) and tv.lattice_tangent.shape == (6,)

    def test_shape_mismatch(self):
        net = randomized()
        with pytest.raises(ValueError):
            net(torch.zeros(2, 3, 3, dtype=DTYPE), torch.zeros(2, 6, dtype=DTYPE), torch.ones(2, 4, dtype=torch.long),
                torch.zeros(2, dtype=DTYPE))
        with pytest.raises(ValueError):
            net(torch.zeros(2, 3, dtype=DTYPE), torch.zeros(2, 6, dtype=DTYPE), torch.ones(2, 3, dtype=torch.long),
                torch.zeros(2, dtype=DTYPE))

    def test_no_orientation_input(self):
        params = list(inspect.signature(VelocityNet.forward).parameters)
        assert params == ["self", "frac", "lattice", "z", "t", "project"]

    def test_deterministic(self, rng):
        net = randomized()
        c = random_crystal(rng, 6)
        a, b = forward(net, c, 0.4), forward(net, c, 0.4)
        assert np.array_equal(a.coord_tangent, b.coord_tangent)
        assert np.array_equal(a.lattice_tangent, b.lattice_tangent)

    def test_seeded_init_is_reproducible(self):
        a, b = VelocityNet(SMALL, seed=3), VelocityNet(SMALL, seed=3)
        for (_, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(x, y)

    def test_projection_removes_mean(self, rng):
        tv = forward(randomized(), random_crystal(rng, 6), 0.5)
        assert np.allclose(tv.coord_tangent.mean(0), 0, atol=1e-14)

    def test_standardization_must_be_positive(self):
        net = VelocityNet(SMALL)
        with pytest.raises(ValueError):
            net.set_standardization(np.zeros(6), np.zeros(6), np.ones(3), np.zeros(6), np.ones(6))

    def test_presets(self):
        assert PRESETS["desk"] == NetConfig(hidden=64, layers=3, n_freq=10)
        assert PRESETS["paper"].hidden == 512 and PRESETS["paper"].layers == 6 and PRESETS["paper"].time_dim == 256


class TestSymmetry:
    def test_permutation_equivariance(self, rng):
        net = randomized()
        for _ in range(100):
            n = int(rng.integers(1, 9))
            c = random_crystal(rng, n)
            perm = rng.permutation(n)
            t = float(rng.random())
            a, b = forward(net, c, t), forward(net, c.permuted(perm), t)
            assert np.allclose(b.coord_tangent, a.coord_tangent[perm], atol=1e-9)
            assert np.allclose(b.lattice_tangent, a.lattice_tangent, atol=1e-9)

    def test_translation_invariance(self, rng):
        net = randomized()
        for _ in range(100):
            c = random_crystal(rng, int(rng.integers(1, 9)))
            shifted = c.replace(frac_coords=c.frac_coords + rng.random(3))
            t = float(rng.random())
            a, b = forward(net, c, t), forward(net, shifted, t)
            assert np.allclose(a.coord_tangent, b.coord_tangent, atol=1e-9)
            assert np.allclose(a.lattice_tangent, b.lattice_tangent, atol=1e-9)


def _pairs(rng, k=4, n=3):
    out = []
    for _ in range(k):
        c1 = random_crystal(rng, n, species=("Na",))
        c0 = random_crystal(rng, n, species=("Na",))
        out.append((c0, c1))
    return out


def directional_fd_errors(net, loss_of, rng, n_dirs=10, h=1e-5):
    params = [p for p in net.parameters()]
    grads = gradient(net, None, lambda m, _: loss_of(m))
    names = [n for n, _ in net.named_parameters()]
    errors = []
    for _ in range(n_dirs):
        dirs = [torch.as_tensor(rng.standard_normal(tuple(p.shape)), dtype=DTYPE) for p in params]
        norm = torch.sqrt(sum((d**2).sum() for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = sum(float((torch.as_tensor(grads[n]) * d).sum()) for n, d in zip(names, dirs))
        with torch.no_grad():
            for p, d in zip(params, dirs):
                p.add_(h * d)
            up = float(loss_of(net))
            for p, d in zip(params, dirs):
                p.sub_(2 * h * d)
            down = float(loss_of(net))
            for p, d in zip(params, dirs):
                p.add_(h * d)
        fd = (up - down) / (2 * h)
        errors.append(abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-12))
    return errors


class TestGradient:
    def test_matches_finite_differences(self, rng):
        net = randomized(NetConfig(hidden=8, time_dim=8, layers=2, n_freq=3))
        batch = make_batch(_pairs(rng))
        t = torch.as_tensor(rng.uniform(0, 1, batch.size), dtype=DTYPE)
        errs = directional_fd_errors(net, lambda m: rfm_loss_batch(m, batch, t).mean(), rng)
        assert max(errs) < 1e-4

    def test_constant_loss_zero_gradient(self, rng):
        net = randomized()
        batch = make_batch(_pairs(rng))
        t = torch.full((batch.size,), 0.3, dtype=DTYPE)
        grads = gradient(net, batch, lambda m, b: 0.0 * rfm_loss_batch(m, b, t).sum() + 1.5)
        assert all(np.all(g == 0) for g in grads.values())

    def test_mean_direction_gets_no_gradient(self, rng):
        # a uniform shift of every atom's velocity is projected out before the loss
        net = randomized()
        batch = make_batch(_pairs(rng))
        t = torch.full((batch.size,), 0.3, dtype=DTYPE)
        grads = gradient(net, batch, lambda m, b: rfm_loss_batch(m, b, t).mean())
        assert np.allclose(grads["coord_head.2.bias"], 0, atol=1e-12)
        assert np.abs(grads["coord_head.2.weight"]).max() > 1e-8

    def test_nonfinite_loss(self, rng):
        net = randomized()
        with pytest.raises(FloatingPointError):
            gradient(net, None, lambda m, _: torch.tensor(float("nan"), dtype=DTYPE))


def test_checkpoint_round_trip(tmp_path, rng):
    net = randomized()
    net.set_standardization(rng.random(6) + 1, rng.random(6) + 1, rng.random(3) + 1, rng.random(6), rng.random(6) + 1)
    save_checkpoint(net, tmp_path / "m.npz", {"note": "x"})
    back, extra = load_checkpoint(tmp_path / "m.npz")
    assert extra == {"note": "x"} and back.config == net.config
    for (k, a), (_, b) in zip(net.state_dict().items(), back.state_dict().items()):
        assert torch.equal(a, b), k
    c = random_crystal(rng, 4)
    assert np.array_equal(forward(net, c, 0.2).coord_tangent, forward(back, c, 0.2).coord_tangent)
