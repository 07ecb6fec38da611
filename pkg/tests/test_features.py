import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ldgen.errors import (DegenerateMaskError, DegenerateStatisticsError, DimensionError,
                          FormatError, SpaceTagError, VersionError)
from ldgen.features import (FeatureSequence, ScaleCalibration, Space,
                            calibrate_scale_coefficient, decode_feature_batch,
                            encode_feature_batch, load_feature_batch, masked_rms, pad_batch,
                            save_feature_batch, scale_features)


def seq(values, mask=None, space=Space.LLM):
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(len(values), dtype=bool) if mask is None else np.asarray(mask)
    return FeatureSequence(values, mask, space)


def loop_rms(values, mask):
    total, count = 0.0, 0
    for row, ok in zip(values, mask):
        if ok:
            for v in row:
                total += v * v
                count += 1
    return math.sqrt(total / count)


def test_sequence_invariants():
    with pytest.raises(DimensionError):
        FeatureSequence(np.ones(3), np.ones(3, dtype=bool), Space.LLM)
    with pytest.raises(DimensionError):
        seq(np.ones((3, 2)), [True, True])
    with pytest.raises(DegenerateMaskError):
        seq(np.ones((2, 2)), [False, False])
    with pytest.raises(ValueError):
        seq([[1.0, np.nan]])


def test_masked_rms_constant():
    assert masked_rms(seq(np.full((3, 4), 2.0))) == 2.0


def test_masked_rms_excludes_masked_rows():
    values = np.vstack([np.full((2, 3), 3.0), np.full((1, 3), 1.0)])
    assert masked_rms(seq(values, [False, False, True])) == 1.0


def test_masked_rms_matches_loop_oracle():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(9, 5))
    mask = rng.random(9) > 0.3
    mask[0] = True
    assert abs(masked_rms(seq(values, mask)) - loop_rms(values, mask)) < 1e-12


def test_calibration_ratio_examples():
    src = [seq(np.full((4, 3), 2.0))]
    tgt = [seq(np.full((2, 5), 0.5), space=Space.T5)]
    calib = calibrate_scale_coefficient(src, tgt)
    assert calib.coefficient == 0.25
    assert calib.source_rms == 2.0 and calib.target_rms == 0.5
    same = [seq(np.random.default_rng(1).normal(size=(3, 3)))]
    assert calibrate_scale_coefficient(same, [seq(same[0].values, space=Space.T5)]).coefficient \
        == 1.0


def test_calibration_planted_rms():
    rng = np.random.default_rng(2)
    src = [seq(8.0 * rng.normal(size=(rng.integers(4, 17), 48))) for _ in range(1000)]
    tgt = [seq(rng.normal(size=(8, 64)), space=Space.T5) for _ in range(1000)]
    calib = calibrate_scale_coefficient(src, tgt)
    assert abs(calib.coefficient / 0.125 - 1) < 0.01
    assert abs(calib.coefficient - calib.target_rms / calib.source_rms) < 1e-12


def test_calibration_zero_source():
    with pytest.raises(DegenerateStatisticsError):
        calibrate_scale_coefficient([seq(np.zeros((2, 2)))], [seq(np.ones((2, 2)), space="t5")])


def test_calibration_record_invariants():
    with pytest.raises(ValueError):
        ScaleCalibration(0.5, 1.0, 2.0, 1)
    with pytest.raises(ValueError):
        ScaleCalibration(-1.0, 1.0, -1.0, 1)


def test_scale_features_examples():
    x = seq(np.random.default_rng(3).normal(size=(3, 4)), [True, False, True])
    same = scale_features(x, 1.0)
    assert np.array_equal(same.values, x.values)
    assert np.array_equal(same.mask, x.mask) and same.space is Space.LLM
    fours = scale_features(seq(np.full((2, 3), 4.0)), 0.25)
    assert np.array_equal(fours.values, np.ones((2, 3)))


def test_scale_features_wrong_space():
    with pytest.raises(SpaceTagError):
        scale_features(seq(np.ones((2, 2)), space=Space.T5), 1.0)


def test_scale_closure_on_calibration_batch():
    rng = np.random.default_rng(4)
    src = [seq(5.0 * rng.normal(size=(6, 8))) for _ in range(50)]
    tgt = [seq(rng.normal(size=(4, 10)), space=Space.T5) for _ in range(50)]
    calib = calibrate_scale_coefficient(src, tgt)
    scaled = [scale_features(s, calib) for s in src]
    pooled = math.sqrt(sum((s.values ** 2).sum() for s in scaled)
                       / sum(s.values.size for s in scaled))
    assert 0.99 <= pooled / calib.target_rms <= 1.01
    again = calibrate_scale_coefficient(scaled, tgt)
    assert abs(again.coefficient - 1.0) < 1e-9


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
       arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
       st.floats(1e-3, 10))
def test_scale_features_linear(a, b, c):
    lhs = scale_features(seq(a + b), c).values
    rhs = scale_features(seq(a), c).values + scale_features(seq(b), c).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.abs(lhs).max())


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e6, 1e6))
def test_masked_rows_never_influence_calibration(junk):
    rng = np.random.default_rng(5)
    values = rng.normal(size=(5, 3))
    mask = np.array([True, False, True, False, True])
    tgt = [seq(np.ones((2, 3)), space=Space.T5)]
    base = calibrate_scale_coefficient([seq(values, mask)], tgt).coefficient
    perturbed = values.copy()
    perturbed[~mask] = junk
    assert calibrate_scale_coefficient([seq(perturbed, mask)], tgt).coefficient == base


def test_pad_batch():
    a = seq(np.ones((2, 3)))
    b = seq(2 * np.ones((4, 3)), [True, True, False, True])
    values, mask = pad_batch([a, b])
    assert values.shape == (2, 4, 3)
    assert mask.tolist() == [[True, True, False, False], [True, True, False, True]]
    assert np.array_equal(values[0, 2:], np.zeros((2, 3)))


# -- LDFS --------------------------------------------------------------------------

def _corpus():
    rng = np.random.default_rng(6)
    out = []
    for i, space in enumerate(Space):
        n = 1 + i * 3
        mask = rng.random(n) > 0.4
        mask[-1] = True
        out.append(seq(rng.normal(size=(n, 2 + i)), mask, space))
    return out


def test_ldfs_round_trip_is_bit_exact(tmp_path):
    seqs = _corpus()
    path = tmp_path / "batch.ldfs"
    save_feature_batch(path, seqs)
    back = load_feature_batch(path)
    assert len(back) == len(seqs)
    for a, b in zip(seqs, back):
        assert a.space is b.space
        assert np.array_equal(a.mask, b.mask)
        assert a.values.tobytes() == b.values.tobytes()
    assert encode_feature_batch(back) == path.read_bytes()


def test_ldfs_layout():
    buf = encode_feature_batch([seq([[1.0, 2.0]], space=Space.T5)])
    assert buf[:4] == b"LDFS"
    assert buf[4:8] == (1).to_bytes(4, "little")
    assert buf[8:12] == (1).to_bytes(4, "little") and buf[12:16] == (2).to_bytes(4, "little")
    assert buf[16] == 1 and buf[17] == 1
    assert np.frombuffer(buf[18:], "<f8").tolist() == [1.0, 2.0]


def test_ldfs_empty_batch():
    assert decode_feature_batch(encode_feature_batch([])) == []


def test_ldfs_errors():
    good = encode_feature_batch(_corpus())
    with pytest.raises(FormatError):
        decode_feature_batch(b"XXXX" + good[4:])
    with pytest.raises(VersionError):
        decode_feature_batch(good[:4] + (2).to_bytes(4, "little") + good[8:])
    with pytest.raises(FormatError):
        decode_feature_batch(good[:-3])
