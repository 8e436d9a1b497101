import numpy as np
import pytest

from relcon import dataio, distnet, sampler
from relcon.augment import default_pipeline
from relcon.losses import AUGMENTED_SELF, BETWEEN_USER, WITHIN_USER
from relcon.sampler import SamplerConfig


@pytest.fixture(scope="module")
def data():
    ds, _, _ = dataio.generate_synthetic(dataio.SyntheticSpec(n_users=6, windows_per_recording=3))
    return ds


@pytest.fixture(scope="module")
def index(data):
    return sampler.UserIndex(data, 64)


def batch_for(index, seed=0, size=6):
    stream = sampler.AnchorStream(index, size, np.random.default_rng(seed))
    return stream.next_batch()


class TestConfig:
    def test_counts(self):
        cfg = SamplerConfig(candidate_count=8, within_user_count=3, include_augmented_self=True)
        assert cfg.between_user_count == 4

    @pytest.mark.parametrize("kw", [{"within_user_count": 9}, {"candidate_count": 0},
                                    {"within_user_count": 8, "include_augmented_self": True}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SamplerConfig(**kw)


class TestSampling:
    @pytest.mark.parametrize("c", [0, 2, 4])
    def test_source_counts_and_identity(self, index, c):
        batch = batch_for(index, size=10)
        cfg = SamplerConfig(candidate_count=4, within_user_count=c)
        rng = np.random.default_rng(1)
        for anchor in batch:
            cs = sampler.sample_candidates(anchor, batch, index, cfg, rng)
            assert cs.count(WITHIN_USER) == c and cs.count(BETWEEN_USER) == 4 - c
            keys = [cand.key for cand in cs.candidates]
            assert len(set(keys)) == len(keys)
            assert (anchor.user_id,) + anchor.key not in keys
            for cand in cs.candidates:
                same = cand.window.user_id == anchor.user_id
                assert same == (cand.source == WITHIN_USER)

    def test_between_are_batch_anchors(self, index):
        batch = batch_for(index)
        cs = sampler.sample_candidates(batch[0], batch, index, SamplerConfig(4, 0), np.random.default_rng(0))
        assert all(any(c.window is b for b in batch) for c in cs.candidates)

    def test_augmented_self(self, index):
        batch = batch_for(index)
        cfg = SamplerConfig(candidate_count=4, within_user_count=0, include_augmented_self=True)
        cs = sampler.sample_candidates(batch[0], batch, index, cfg, np.random.default_rng(0), default_pipeline())
        aug = [c for c in cs.candidates if c.source == AUGMENTED_SELF]
        assert len(aug) == 1 and aug[0].window.augmented
        assert aug[0].window.offset == batch[0].offset

    def test_augmented_self_needs_pipeline(self, index):
        batch = batch_for(index)
        cfg = SamplerConfig(candidate_count=4, within_user_count=0, include_augmented_self=True)
        with pytest.raises(ValueError):
            sampler.sample_candidates(batch[0], batch, index, cfg, np.random.default_rng(0))

    def test_deterministic(self, index):
        batch = batch_for(index)
        ids = []
        for _ in range(2):
            cs = sampler.sample_candidates(batch[0], batch, index, SamplerConfig(), np.random.default_rng(9))
            ids.append([c.key for c in cs.candidates])
        assert ids[0] == ids[1]

    def test_insufficient_within_user(self):
        rec = dataio.Recording("solo", "r", 25.0, np.zeros((66, 3)), np.zeros(66, dtype=int))
        other = dataio.Recording("b", "rb", 25.0, np.ones((64, 3)), np.zeros(64, dtype=int))
        ds = dataio.Dataset([rec, other], 25.0)
        idx = sampler.UserIndex(ds, 64)
        anchor = rec.window_at(0, 64)
        with pytest.raises(dataio.DataError, match="solo"):
            sampler.sample_candidates(anchor, [anchor, other.window_at(0, 64)], idx, SamplerConfig(4, 3),
                                      np.random.default_rng(0))

    def test_insufficient_batch(self, index):
        batch = batch_for(index, size=3)
        with pytest.raises(dataio.DataError):
            sampler.sample_candidates(batch[0], batch, index, SamplerConfig(8, 4), np.random.default_rng(0))

    def test_uniform_within_user_draw(self, index):
        rng = np.random.default_rng(0)
        user = index.users()[0]
        recs = [index.draw(user, rng).recording_id for _ in range(3000)]
        counts = np.unique(recs, return_counts=True)[1]
        # every recording of a user has the same length, so draws split evenly across them
        assert counts.min() > 0.8 * counts.mean()


class TestStream:
    def test_epoch_covers_recordings(self, index):
        stream = sampler.AnchorStream(index, 5, np.random.default_rng(0))
        n = len(stream.recs)
        seen = set()
        for _ in range(n // 5):
            seen.update(w.recording_id for w in stream.next_batch())
        assert len(seen) == (n // 5) * 5


class TestScoring:
    def test_scores(self, index):
        p = distnet.init_params(distnet.DistanceNetHyper(), 0)
        batch = batch_for(index)
        cs = sampler.sample_candidates(batch[0], batch, index, SamplerConfig(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            sampler.score_candidates(cs, p)
        p.freeze()
        d1 = sampler.score_candidates(cs, p).dists().copy()
        d2 = sampler.score_candidates(cs, p).dists()
        assert np.all(d1 >= 0) and d1.tobytes() == d2.tobytes()
        single = [distnet.distance(cs.anchor.data, c.window.data, p) for c in cs.candidates]
        assert np.allclose(d1, single, rtol=1e-12)

    def test_unscored(self, index):
        batch = batch_for(index)
        cs = sampler.sample_candidates(batch[0], batch, index, SamplerConfig(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            cs.dists()
