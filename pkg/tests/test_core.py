import numpy as np
import pytest
from hypothesis import given, strategies as st

from spkver.core import (
    Embedding,
    Language,
    NumericalError,
    Trial,
    TrialKey,
    TrialLabel,
    UttMeta,
    build_enroll_model,
    validate_protocol,
)


def _emb(utt_id, vec):
    return Embedding(utt_id=utt_id, vec=np.asarray(vec, dtype=float))


class TestBuildEnrollModel:
    def test_identical_vectors_average_to_themselves(self):
        u = np.array([0.6, 0.8])
        model = build_enroll_model("m", [_emb(f"u{i}", u) for i in range(3)])
        np.testing.assert_allclose(model.centroid, u, atol=1e-12)

    def test_symmetric_pair(self):
        model = build_enroll_model("m", [_emb("a", [1, 0]), _emb("b", [0, 1])])
        np.testing.assert_allclose(model.centroid, [1 / np.sqrt(2), 1 / np.sqrt(2)])

    def test_cancellation_raises(self):
        with pytest.raises(NumericalError, match="zero-norm centroid"):
            build_enroll_model("m", [_emb("a", [1, 0]), _emb("b", [-1, 0])])

    def test_empty_and_mismatched(self):
        with pytest.raises(ValueError):
            build_enroll_model("m", [])
        with pytest.raises(ValueError, match="dimension mismatch"):
            build_enroll_model("m", [_emb("a", [1, 0]), _emb("b", [1, 0, 0])])

    @given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 6))
    def test_unit_norm_and_permutation_invariance(self, seed, dim, count):
        rng = np.random.default_rng(seed)
        vecs = rng.normal(size=(count, dim))
        embs = [_emb(f"u{i}", v) for i, v in enumerate(vecs)]
        try:
            model = build_enroll_model("m", embs)
        except NumericalError:
            return  # degenerate draw
        assert abs(np.linalg.norm(model.centroid) - 1.0) < 1e-12
        flipped = build_enroll_model("m", list(reversed(embs)))
        np.testing.assert_allclose(model.centroid, flipped.centroid, atol=1e-12)


class TestValidateProtocol:
    def _fixture(self):
        metas = [
            UttMeta("u1", "s1", "ph00", Language.L1),
            UttMeta("u2", "s1", "ph00", Language.L1),
            UttMeta("u3", "s2", "ph00", Language.L2),
        ]
        trials = [Trial("t1", "m1", "u3", "ph00")]
        keys = [TrialKey("t1", TrialLabel.IC)]
        enroll = {"m1": ("u1", "u2")}
        return trials, keys, metas, enroll

    def test_consistent_protocol_is_clean(self):
        assert validate_protocol(*self._fixture()) == []

    def test_empty_everything_is_clean(self):
        assert validate_protocol([], [], [], {}) == []

    def test_dangling_test_utt(self):
        trials, keys, metas, enroll = self._fixture()
        trials = [Trial("t1", "m1", "nope", "ph00")]
        report = validate_protocol(trials, keys, metas, enroll)
        assert len(report) == 1 and "dangling test utterance" in report[0]

    def test_duplicate_trial_id(self):
        trials, keys, metas, enroll = self._fixture()
        trials = trials + [Trial("t1", "m1", "u3", "ph00")]
        report = validate_protocol(trials, keys, metas, enroll)
        assert len(report) == 1 and "duplicate trial_id" in report[0]

    def test_missing_key_and_orphan_key(self):
        trials, _, metas, enroll = self._fixture()
        report = validate_protocol(trials, [], metas, enroll)
        assert any("missing key" in r for r in report)
        report = validate_protocol(trials, [TrialKey("t1", TrialLabel.TC), TrialKey("zz", TrialLabel.TC)], metas, enroll)
        assert any("no matching trial" in r for r in report)


class TestTypes:
    def test_embedding_rejects_non_finite(self):
        with pytest.raises(ValueError):
            _emb("u", [1.0, np.nan])

    def test_embedding_is_read_only(self):
        emb = _emb("u", [1.0, 2.0])
        with pytest.raises(ValueError):
            emb.vec[0] = 5.0

    def test_target_pooling(self):
        assert TrialLabel.TC.is_target and TrialLabel.TARGET.is_target
        for label in (TrialLabel.TW, TrialLabel.IC, TrialLabel.IW, TrialLabel.NONTARGET):
            assert not label.is_target
