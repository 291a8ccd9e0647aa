import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ktsep.sampling import (RANDOM_KT, VISTA_LIKE, MaskSpec, audit_mask, center_lines,
                            default_n_center, gen_random_kt, gen_vista_like, generate_mask,
                            load_mask, save_mask)


def test_random_small_budget_and_center():
    m = gen_random_kt(MaskSpec(8, 6, 4, RANDOM_KT, seed=1, n_center=1))
    assert m.data.sum(axis=0).tolist() == [2] * 6
    assert m.data[4].all()


@pytest.mark.parametrize("pattern", [RANDOM_KT, VISTA_LIKE])
def test_af_one_is_full(pattern):
    m = generate_mask(MaskSpec(10, 4, 1, pattern, seed=3))
    assert m.data.all()


def test_random_determinism_over_100_seeds():
    for seed in range(100):
        spec = MaskSpec(24, 6, 4, RANDOM_KT, seed=seed)
        a, b = gen_random_kt(spec), gen_random_kt(spec)
        c = gen_random_kt(MaskSpec(24, 6, 4, RANDOM_KT, seed=seed + 1))
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)
        assert np.array_equal(a.data.sum(0), c.data.sum(0))


def test_vista_arithmetic_24_12_8():
    m = gen_vista_like(MaskSpec(24, 12, 8, VISTA_LIKE, seed=0, n_center=1))
    assert m.data.sum(axis=0).tolist() == [3] * 12
    assert m.data.sum() == 36
    assert m.data[12].all()


def test_vista_union_covers_more_than_a_frame():
    m = gen_vista_like(MaskSpec(32, 8, 4, VISTA_LIKE, seed=5))
    assert m.data.any(axis=1).sum() > m.data[:, 0].sum()


def test_vista_density_audit_1000_seeds():
    # calibration over 200 seeds gave >= 0.56 for every configuration tried; threshold 0.5
    n_pe = 48
    third = slice(n_pe // 3, 2 * n_pe // 3)
    fractions = []
    for seed in range(1000):
        d = gen_vista_like(MaskSpec(n_pe, 4, 6, VISTA_LIKE, seed=seed)).data
        fractions.append(d[third].sum() / d.sum())
    assert np.mean(fractions) >= 0.5


def test_vista_overlap_below_random_1000_seeds():
    seeds = range(1000)
    ov = {p: np.mean([audit_mask(generate_mask(MaskSpec(24, 12, 8, p, seed=s)))
                      ["temporal_overlap_fraction"] for s in seeds])
          for p in (RANDOM_KT, VISTA_LIKE)}
    assert ov[VISTA_LIKE] < ov[RANDOM_KT]


def test_audit_full_mask():
    rep = audit_mask(np.ones((6, 3), bool))
    assert rep["realized_af"] == 1.0
    assert rep["temporal_overlap_fraction"] == 1.0
    assert rep["per_frame_counts"] == [6, 6, 6]


def test_audit_af6_within_rounding():
    for seed in range(20):
        rep = audit_mask(gen_random_kt(MaskSpec(50, 8, 6, seed=seed)))
        assert 6 * 0.9 <= rep["realized_af"] <= 6 * 1.1


def test_budget_below_center_rejected():
    with pytest.raises(ValueError):
        MaskSpec(8, 2, 4, n_center=3)
    with pytest.raises(ValueError):
        MaskSpec(8, 2, 0.5)
    with pytest.raises(ValueError):
        MaskSpec(8, 2, 2, pattern="SPIRAL")


def test_default_center_count():
    assert default_n_center(24) == 1
    assert default_n_center(192) == 4
    assert center_lines(8, 3).tolist() == [3, 4, 5]


def test_save_load_with_sidecar(tmp_path):
    m = generate_mask(MaskSpec(16, 5, 4, VISTA_LIKE, seed=9))
    save_mask(m, tmp_path / "m.ktb")
    meta = json.loads((tmp_path / "m.ktb.json").read_text())
    assert {"pattern", "af", "seed", "n_center"} <= set(meta)
    back = load_mask(tmp_path / "m.ktb")
    assert back == m


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 64), st.integers(1, 10), st.sampled_from([2, 3, 4, 6, 8]),
       st.sampled_from([RANDOM_KT, VISTA_LIKE]), st.integers(0, 2**64 - 1))
def test_budget_center_determinism_property(n_pe, t, af, pattern, seed):
    try:
        spec = MaskSpec(n_pe, t, af, pattern, seed=seed)
    except ValueError:
        return  # budget below the center block
    m = generate_mask(spec)
    assert np.all(m.data.sum(axis=0) == spec.budget)
    assert m.data[center_lines(n_pe, spec.n_center)].all()
    assert np.array_equal(generate_mask(spec).data, m.data)
