import json
import math
from pathlib import Path

import numpy as np
import pytest

from tca.backbone import (
    BlockWeights, GridSpec, StageModel, block_forward, init_weights, load_weights,
    merge_windows, partition_windows, save_weights, stage_forward,
)
from tca.clustering import cluster_frame
from tca.errors import ConfigError, FormatError, ShapeError

GOLDEN = Path(__file__).parent / "golden" / "init_seed0_L8.json"


def naive_block(x, w, heads):
    """Loop-by-loop pre-norm block for a single window (t x L)."""
    t, L = x.shape
    dh = L // heads

    def ln(v, g, b):
        mu = sum(v) / L
        var = sum((e - mu) ** 2 for e in v) / L
        if var == 0:
            return [b[i] for i in range(L)]
        return [(v[i] - mu) / math.sqrt(var + 1e-5) * g[i] + b[i] for i in range(L)]

    def lin(v, W, b):
        return [sum(v[i] * W[i][j] for i in range(len(v))) + b[j] for j in range(len(b))]

    x = [list(r) for r in x]
    h = [ln(r, w.norm1_g, w.norm1_b) for r in x]
    qkv = [lin(r, w.qkv_w, w.qkv_b) for r in h]
    out = [[0.0] * L for _ in range(t)]
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        q = [r[0 * L:1 * L][sl] for r in qkv]
        k = [r[1 * L:2 * L][sl] for r in qkv]
        v = [r[2 * L:3 * L][sl] for r in qkv]
        for i in range(t):
            s = [sum(a * b for a, b in zip(q[i], k[j])) / math.sqrt(dh) for j in range(t)]
            mx = max(s)
            e = [math.exp(z - mx) for z in s]
            p = [z / sum(e) for z in e]
            for c in range(dh):
                out[i][hd * dh + c] = sum(p[j] * v[j][c] for j in range(t))
    x = [[a + b for a, b in zip(xr, lin(o, w.proj_w, w.proj_b))] for xr, o in zip(x, out)]
    res = []
    for r in x:
        h = lin(ln(r, w.norm2_g, w.norm2_b), w.fc1_w, w.fc1_b)
        h = [0.5 * z * (1 + math.tanh(math.sqrt(2 / math.pi) * (z + 0.044715 * z ** 3))) for z in h]
        res.append([a + b for a, b in zip(r, lin(h, w.fc2_w, w.fc2_b))])
    return np.array(res)


def random_block(L, seed):
    rng = np.random.default_rng(seed)
    w = BlockWeights.zeros(L)
    for name, shape in BlockWeights.shapes(L).items():
        setattr(w, name, rng.normal(scale=0.3, size=shape))
    return w


def test_grid_spec():
    s = GridSpec()
    assert (s.tokens_per_window, s.num_windows, s.M, s.K) == (144, 16, 144, 16)
    with pytest.raises(ShapeError):
        GridSpec(10, 12, 4, 8)


def test_partition_identity_window_and_layout():
    x = np.random.default_rng(0).normal(size=(3, 5, 2))
    g = partition_windows(x, 1)
    assert np.array_equal(g.tokens.reshape(3, 5, 2), x)

    x = np.arange(16, dtype=float).reshape(4, 4, 1)  # value = row*4 + col
    g = partition_windows(x, 2)
    assert g.tokens.shape == (4, 4, 1)
    assert g.tokens[0, :, 0].tolist() == [0, 1, 4, 5]  # (0,0),(0,1),(1,0),(1,1)
    assert g.tokens[1, :, 0].tolist() == [2, 3, 6, 7]
    assert g.window_origin == [(0, 0), (0, 2), (2, 0), (2, 2)]


def test_partition_merge_round_trip_bit_exact():
    rng = np.random.default_rng(1)
    for h, w, win in [(4, 4, 2), (6, 9, 3), (48, 48, 12), (5, 5, 1)]:
        x = rng.normal(size=(h, w, 3))
        assert np.array_equal(merge_windows(partition_windows(x, win)), x)
    with pytest.raises(ShapeError):
        partition_windows(np.zeros((5, 4, 2)), 2)


def test_block_zero_weights_is_residual_only():
    x = np.random.default_rng(2).normal(size=(3, 5, 8))
    assert np.array_equal(block_forward(x, BlockWeights.zeros(8), 2), x)


def test_block_single_token_attention_is_one():
    w = random_block(8, 3)
    x = np.random.default_rng(3).normal(size=(2, 1, 8))
    # with one token the attention output is exactly v, so block == naive
    np.testing.assert_allclose(block_forward(x, w, 2)[0], naive_block(x[0], w, 2), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_block_matches_naive_attention(seed):
    w = random_block(8, seed)
    x = np.random.default_rng(100 + seed).normal(size=(3, 2, 8))
    got = block_forward(x, w, 2)
    for k in range(3):
        np.testing.assert_allclose(got[k], naive_block(x[k], w, 2), atol=1e-9)


def test_block_channel_mismatch():
    with pytest.raises(ShapeError):
        block_forward(np.zeros((1, 2, 6)), BlockWeights.zeros(8), 2)


def test_init_deterministic_and_golden():
    spec = GridSpec(8, 8, 4, 8)
    a, b = init_weights(0, spec, 2, 2), init_weights(0, spec, 2, 2)
    assert a.equals(b)
    assert not a.equals(init_weights(1, spec, 2, 2))
    golden = json.loads(GOLDEN.read_text())
    assert a.blocks[0].qkv_w[0, 0] == float.fromhex(golden["first_qkv_w"])
    assert a.blocks[1].fc2_w[-1, -1] == float.fromhex(golden["last_fc2_w_block1"])
    bound = 1 / math.sqrt(8)
    assert np.all(np.abs(a.blocks[0].fc1_w) <= bound)
    assert np.all(a.blocks[0].qkv_b == 0) and np.all(a.blocks[0].norm1_g == 1)


def test_heads_must_divide_channels():
    with pytest.raises(ConfigError):
        init_weights(0, GridSpec(4, 4, 2, 6), 1, 4)


def test_save_load_round_trip(tmp_path):
    m = init_weights(5, GridSpec(8, 8, 4, 8), 3, 2)
    path = tmp_path / "m.tcaw"
    save_weights(m, path)
    assert load_weights(path).equals(m)
    # header layout
    raw = path.read_bytes()
    assert raw[:4] == b"TCAW"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert [int.from_bytes(raw[8 + 4 * i:12 + 4 * i], "little") for i in range(6)] == [8, 8, 4, 8, 3, 2]


def test_load_rejects_bad_files(tmp_path):
    m = init_weights(5, GridSpec(8, 8, 4, 8), 2, 2)
    path = tmp_path / "m.tcaw"
    save_weights(m, path)
    raw = path.read_bytes()

    (tmp_path / "magic.tcaw").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError) as e:
        load_weights(tmp_path / "magic.tcaw")
    assert e.value.offset == 0

    cut = len(raw) - 100
    (tmp_path / "short.tcaw").write_bytes(raw[:cut])
    with pytest.raises(FormatError) as e:
        load_weights(tmp_path / "short.tcaw")
    assert 32 <= e.value.offset <= cut and "offset" in str(e.value)

    (tmp_path / "header.tcaw").write_bytes(raw[:20])
    with pytest.raises(FormatError):
        load_weights(tmp_path / "header.tcaw")

    bad = bytearray(raw)
    bad[8:12] = (7).to_bytes(4, "little")  # height not divisible by window
    (tmp_path / "dims.tcaw").write_bytes(bytes(bad))
    with pytest.raises(FormatError):
        load_weights(tmp_path / "dims.tcaw")


@pytest.fixture(scope="module")
def small_model():
    return init_weights(0, GridSpec(8, 8, 4, 8), 4, 2)


def test_stage_forward_deterministic(small_model):
    x = np.random.default_rng(7).normal(size=(8, 8, 8))
    assert np.array_equal(stage_forward(small_model, x), stage_forward(small_model, x))


def test_stage_forward_hook_order_and_range(small_model):
    seen = []

    def spy(i):
        def hook(g):
            seen.append(i)
            return g
        return hook

    x = np.random.default_rng(8).normal(size=(8, 8, 8))
    out = stage_forward(small_model, x, {2: spy(2), 0: spy(0)})
    assert seen == [0, 2]
    assert np.array_equal(out, stage_forward(small_model, x))
    with pytest.raises(ConfigError):
        stage_forward(small_model, x, {4: spy(4)})
    with pytest.raises(ShapeError):
        stage_forward(small_model, np.zeros((8, 4, 8)))


def test_stage_forward_hook_runs_before_block(small_model):
    x = np.random.default_rng(9).normal(size=(8, 8, 8))
    # a hook before block 0 that zeroes tokens equals running on a zero frame
    zeroed = stage_forward(small_model, x, {0: lambda g: type(g)(g.spec, np.zeros_like(g.tokens))})
    assert np.array_equal(zeroed, stage_forward(small_model, np.zeros_like(x)))


def test_identity_clustering_hook_matches_baseline(small_model):
    x = np.random.default_rng(10).normal(size=(8, 8, 8))
    out = stage_forward(small_model, x, {1: lambda g: cluster_frame(g, 16, 5)})
    np.testing.assert_allclose(out, stage_forward(small_model, x), atol=1e-9)


def test_clustered_tokens_reconstructed_after_last_block(small_model):
    x = np.random.default_rng(11).normal(size=(8, 8, 8))
    out = stage_forward(small_model, x, {0: lambda g: cluster_frame(g, 4, 3)})
    assert out.shape == x.shape
    # every window holds at most 4 distinct output vectors
    g = partition_windows(out, 4)
    for k in range(g.spec.num_windows):
        assert len(np.unique(g.tokens[k], axis=0)) <= 4


@pytest.mark.parametrize("seed", range(25))
def test_window_locality(small_model, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 8, 8))
    k1 = int(rng.integers(4))
    y = x.copy()
    r, c = divmod(k1, 2)
    y[4 * r:4 * r + 4, 4 * c:4 * c + 4] = 0.0
    hooks = {} if seed % 2 else {1: lambda g: cluster_frame(g, 4, 2)}
    a = partition_windows(stage_forward(small_model, x, hooks), 4).tokens
    b = partition_windows(stage_forward(small_model, y, hooks), 4).tokens
    for k in range(4):
        if k != k1:
            np.testing.assert_array_equal(a[k], b[k])
