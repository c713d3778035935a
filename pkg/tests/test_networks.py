import numpy as np
import pytest

from weakdis.networks import (
    ArchConfig,
    decode,
    discriminate,
    encode,
    init_params,
    load_checkpoint,
    relate,
    save_checkpoint,
)


@pytest.fixture(scope="module")
def small_arch():
    return ArchConfig(
        n_z=4,
        height=32,
        width=32,
        channels=1,
        conv_channels=(8, 16, 32),
        mlp_width=32,
        relation_arity=1,
        relation_count=5,
    )


@pytest.fixture(scope="module")
def small_params(small_arch):
    return init_params(small_arch, seed=0)


def test_relation_code_dim():
    few = ArchConfig(n_z=8, height=32, width=32, channels=1, relation_arity=1, relation_count=5)
    many = ArchConfig(n_z=8, height=32, width=32, channels=1, relation_arity=2, relation_count=13)
    assert few.relation_code_dim == 8
    assert many.relation_code_dim == 13


def test_arch_rejects_bad_geometry():
    with pytest.raises(ValueError):
        ArchConfig(
            n_z=4, height=30, width=30, channels=1, relation_arity=1, relation_count=3
        ).conv_out_side


def test_encode_decode_shapes(small_arch, small_params):
    rng = np.random.default_rng(0)
    x = rng.random((6, 32, 32, 1), dtype=np.float32)
    z = encode(small_params, x)
    assert z.shape == (6, 4)
    assert z.dtype == np.float32
    x_hat = decode(small_params, z)
    assert x_hat.shape == x.shape
    assert 0.0 <= x_hat.min() and x_hat.max() <= 1.0


def test_discriminate_range(small_params):
    rng = np.random.default_rng(1)
    z = rng.normal(size=(16, 4)).astype(np.float32)
    d = discriminate(small_params, z)
    assert d.shape == (16,)
    assert np.all(d > 0.0) and np.all(d < 1.0)


def test_relate_shapes(small_params):
    rng = np.random.default_rng(2)
    z = rng.normal(size=(3, 1, 4)).astype(np.float32)
    code = np.eye(5, dtype=np.float32)[:3]
    out = relate(small_params, z, code)
    assert out.shape == (3, 4)


def test_batch_independence(small_params):
    rng = np.random.default_rng(3)
    x = rng.random((5, 32, 32, 1), dtype=np.float32)
    full = encode(small_params, x)
    one = encode(small_params, x[2:3])
    np.testing.assert_allclose(full[2], one[0], atol=1e-5)


def test_init_deterministic(small_arch):
    a = init_params(small_arch, seed=9)
    b = init_params(small_arch, seed=9)
    c = init_params(small_arch, seed=10)
    for (na, ta), (nb, tb) in zip(a.state_blocks().items(), b.state_blocks().items()):
        assert na == nb
        assert np.array_equal(ta, tb)
    assert any(
        not np.array_equal(ta, tc)
        for ta, tc in zip(a.state_blocks().values(), c.state_blocks().values())
    )


def test_init_fan_in_bounds(small_arch, small_params):
    import torch

    for module in small_params.modules().values():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                assert torch.all(p == 0)
            else:
                fan_in = p[0].numel()
                bound = 1.0 / np.sqrt(fan_in)
                assert p.abs().max().item() <= bound + 1e-7


def test_shape_validation(small_params):
    with pytest.raises(ValueError):
        encode(small_params, np.zeros((2, 16, 16, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        decode(small_params, np.zeros((2, 7), dtype=np.float32))
    with pytest.raises(ValueError):
        relate(
            small_params,
            np.zeros((2, 1, 4), dtype=np.float32),
            np.zeros((2, 9), dtype=np.float32),
        )


def test_checkpoint_round_trip(tmp_path, small_arch, small_params):
    path = tmp_path / "net.wdck"
    meta = {"epoch": 12, "note": "round trip"}
    extra = {"prior.means": np.arange(12, dtype=np.float32).reshape(3, 4)}
    save_checkpoint(path, small_params, meta, extra)
    params, meta2, extra2 = load_checkpoint(path)
    assert meta2["epoch"] == 12
    assert np.array_equal(extra2["prior.means"], extra["prior.means"])
    for (na, ta), (nb, tb) in zip(
        small_params.state_blocks().items(), params.state_blocks().items()
    ):
        assert na == nb
        assert np.array_equal(ta, tb)
    # outputs identical after reload
    rng = np.random.default_rng(4)
    x = rng.random((2, 32, 32, 1), dtype=np.float32)
    assert np.array_equal(encode(small_params, x), encode(params, x))


def test_checkpoint_bytes_stable(tmp_path, small_params):
    p1, p2 = tmp_path / "a.wdck", tmp_path / "b.wdck"
    save_checkpoint(p1, small_params, {"k": 1}, {})
    save_checkpoint(p2, small_params, {"k": 1}, {})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_corrupt(tmp_path, small_params):
    path = tmp_path / "c.wdck"
    save_checkpoint(path, small_params, {}, {})
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_checkpoint(path)
