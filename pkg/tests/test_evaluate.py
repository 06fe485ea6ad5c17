import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seds.data import Manifest
from seds.evaluate import evaluate, rank_queries, report, retrieval_reports, write_reports
from seds.tensor import io as tio
from seds.train import TrainConfig, train

from conftest import tiny_train_config


def oracle_ranks(m):
    # stable sort on -score: ties resolve toward the lower candidate index
    out = []
    for i, row in enumerate(m):
        order = np.argsort(-row, kind="stable")
        out.append(int(np.flatnonzero(order == i)[0]) + 1)
    return np.array(out)


class TestRanks:
    def test_identity(self):
        np.testing.assert_array_equal(rank_queries(np.eye(4)), [1, 1, 1, 1])
        np.testing.assert_array_equal(rank_queries(np.eye(4), "v2t"), [1, 1, 1, 1])

    def test_anti_diagonal(self):
        m = np.array([[0.1, 0.9], [0.9, 0.1]])
        np.testing.assert_array_equal(rank_queries(m), [2, 2])

    def test_direction_uses_columns(self):
        m = np.array([[1.0, 0.0], [2.0, 0.5]])
        np.testing.assert_array_equal(rank_queries(m, "t2v"), [1, 2])
        np.testing.assert_array_equal(rank_queries(m, "v2t"), [2, 1])

    def test_ties_break_to_lower_index(self):
        m = np.ones((3, 3))
        np.testing.assert_array_equal(rank_queries(m), [1, 2, 3])

    def test_matches_stable_sort_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            b = int(rng.integers(1, 17))
            # coarse values force plenty of ties
            m = rng.integers(0, 4, size=(b, b)).astype(float)
            np.testing.assert_array_equal(rank_queries(m), oracle_ranks(m))
            np.testing.assert_array_equal(rank_queries(m, "v2t"), oracle_ranks(m.T))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (5, 5), elements=st.floats(-1, 1)), st.integers(0, 4), st.floats(0.01, 2))
    def test_raising_ground_truth_never_hurts(self, m, i, bump):
        before = rank_queries(m)[i]
        m2 = m.copy()
        m2[i, i] += bump
        assert rank_queries(m2)[i] <= before

    def test_rejects_rectangular(self):
        with pytest.raises(ValueError):
            rank_queries(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            rank_queries(np.eye(2), "sideways")


class TestReport:
    def test_example(self):
        r = report([1, 2, 3, 4])
        assert (r.r1, r.r5, r.r10, r.medr) == (25.0, 100.0, 100.0, 2.5)

    def test_single_query(self):
        r = report([1])
        assert (r.r1, r.medr) == (100.0, 1.0)

    def test_recall_is_monotone(self):
        rng = np.random.default_rng(1)
        r = report(rng.integers(1, 30, size=40))
        assert r.r1 <= r.r5 <= r.r10

    def test_empty(self):
        with pytest.raises(ValueError):
            report([])

    def test_perfect_pair(self):
        t2v, v2t = retrieval_reports(np.eye(3), np.eye(3))
        assert t2v.r1 == v2t.r1 == 100.0


@pytest.fixture(scope="module")
def ckpt(tiny_data, tmp_path_factory):
    cfg = TrainConfig.from_dict(tiny_train_config(epochs=1))
    return train(cfg, tiny_data, tmp_path_factory.mktemp("eval_run")).best


class TestEvaluate:
    def test_deterministic_and_bounded(self, ckpt, tiny_data):
        a = evaluate(ckpt, tiny_data, "test")
        b = evaluate(ckpt, tiny_data, "test")
        assert [x.to_dict() for x in a] == [x.to_dict() for x in b]
        n = len(Manifest(tiny_data).split("test"))
        for r in a:
            assert len(r.ranks) == n and all(1 <= k <= n for k in r.ranks)

    def test_chunking_does_not_change_scores(self, ckpt, tiny_data):
        a = evaluate(ckpt, tiny_data, "val", chunk=64)
        b = evaluate(ckpt, tiny_data, "val", chunk=3)
        assert [x.ranks for x in a] == [x.ranks for x in b]

    @pytest.mark.parametrize("modality", ["pose", "rgb"])
    def test_single_stream_modalities(self, ckpt, tiny_data, modality):
        t2v, v2t = evaluate(ckpt, tiny_data, "test", modality)
        assert t2v.direction == "t2v" and v2t.direction == "v2t"

    def test_single_sample_split(self, ckpt, tiny_data, tmp_path):
        raw = json.loads((tiny_data / "manifest.json").read_text())
        keep = [s for s in raw["samples"] if s["split"] == "test"][:1]
        for s in keep:
            for key in ("pose_file", "rgb_file"):
                s[key] = str(tiny_data / s[key])
        (tmp_path / "manifest.json").write_text(json.dumps({**raw, "samples": keep}))
        t2v, v2t = evaluate(ckpt, tmp_path, "test")
        assert t2v.r1 == v2t.r1 == 100.0 and t2v.medr == 1.0

    def test_unknown_modality_and_split(self, ckpt, tiny_data):
        with pytest.raises(ValueError):
            evaluate(ckpt, tiny_data, "test", "audio")
        with pytest.raises(ValueError):
            evaluate(ckpt, tiny_data, "holdout")

    def test_vocab_mismatch(self, ckpt, tiny_data, tmp_path):
        raw = json.loads((tiny_data / "manifest.json").read_text())
        raw["vocab"] = raw["vocab"] + ["EXTRA"]
        for s in raw["samples"]:
            for key in ("pose_file", "rgb_file"):
                s[key] = str(tiny_data / s[key])
        (tmp_path / "manifest.json").write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="vocabulary"):
            evaluate(ckpt, tmp_path, "test")

    def test_export(self, ckpt, tiny_data, tmp_path):
        m = Manifest(tiny_data)
        idx = m.split("test")
        sid = m.samples[idx[1]]["id"]
        evaluate(ckpt, m, "test", export_ids=[sid], out_dir=tmp_path)
        side = json.loads((tmp_path / "sim" / "index.json").read_text())
        n = len(idx)
        for name in side["matrices"].values():
            assert tio.load(tmp_path / "sim" / name).shape == (n, n)
        t2v, _ = evaluate(ckpt, m, "test")
        mt = tio.load(tmp_path / "sim" / side["matrices"]["M_t2k"])
        np.testing.assert_array_equal(rank_queries(mt), t2v.ranks)
        for name in side["samples"][sid].values():
            e = tio.load(tmp_path / "sim" / name)
            assert e.ndim == 2 and e.size > 0
            assert np.all(np.abs(e) <= 1 + 1e-9)
        with pytest.raises(ValueError, match="unknown sample ids"):
            evaluate(ckpt, m, "test", export_ids=["nope"], out_dir=tmp_path)

    def test_write_reports(self, ckpt, tiny_data, tmp_path):
        reps = evaluate(ckpt, tiny_data, "test")
        path = write_reports(tmp_path / "r.json", reps, ckpt, "test", "fused")
        data = json.loads(path.read_text())
        assert [d["direction"] for d in data] == ["t2v", "v2t"]
        assert data[0]["split"] == "test" and data[0]["checkpoint"] == str(ckpt)
