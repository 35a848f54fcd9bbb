import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdsbm.graph_model import extract_block_series
from sdsbm.ingest import (
    BucketingConfig,
    EdgeEvent,
    IngestError,
    MISSING_OBSERVATION,
    ModelChecksumError,
    ModelVersionError,
    bucketize,
    load_model,
    parse_inputs,
    save_model,
)
from sdsbm.ssm import ModelParams


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseInputs:
    def test_minimal_files(self, tmp_path):
        types = write(tmp_path, "types.csv", "vertex,type\n1,a\n2,b\n")
        events = write(tmp_path, "events.csv", "timestamp,src,dst\n100,1,2\n")
        evs, typing = parse_inputs(events, types)
        assert evs == [EdgeEvent(timestamp=100.0, src="1", dst="2")]
        assert typing.types == ("a", "b")

    def test_unknown_vertex_is_named(self, tmp_path):
        types = write(tmp_path, "types.csv", "vertex,type\n1,a\n2,b\n")
        events = write(tmp_path, "events.csv", "timestamp,src,dst\n100,1,9\n")
        with pytest.raises(IngestError, match="'9'"):
            parse_inputs(events, types)

    def test_empty_events_file(self, tmp_path):
        types = write(tmp_path, "types.csv", "vertex,type\n1,a\n2,b\n")
        events = write(tmp_path, "events.csv", "timestamp,src,dst\n")
        evs, typing = parse_inputs(events, types)
        assert evs == []
        assert len(typing.vertex_ids) == 2

    def test_malformed_row_reports_line(self, tmp_path):
        types = write(tmp_path, "types.csv", "vertex,type\n1,a\n2,b\n")
        events = write(tmp_path, "events.csv", "timestamp,src,dst\n1,1,2\nbogus,1,2\n")
        with pytest.raises(IngestError, match=":3"):
            parse_inputs(events, types)

    def test_self_loop_event_rejected(self, tmp_path):
        types = write(tmp_path, "types.csv", "vertex,type\n1,a\n")
        events = write(tmp_path, "events.csv", "timestamp,src,dst\n5,1,1\n")
        with pytest.raises(IngestError, match="self-loop"):
            parse_inputs(events, types)

    def test_duplicate_vertex_rejected(self, tmp_path):
        types = write(tmp_path, "types.csv", "vertex,type\n1,a\n1,b\n")
        events = write(tmp_path, "events.csv", "timestamp,src,dst\n")
        with pytest.raises(IngestError, match="duplicate"):
            parse_inputs(events, types)

    def test_bad_header_rejected(self, tmp_path):
        types = write(tmp_path, "types.csv", "id,kind\n1,a\n")
        events = write(tmp_path, "events.csv", "timestamp,src,dst\n")
        with pytest.raises(IngestError, match="header"):
            parse_inputs(events, types)


def typing_ab():
    from sdsbm.graph_model import VertexTyping

    return VertexTyping(vertex_ids=("1", "2", "3"), type_of={"1": "a", "2": "a", "3": "b"})


class TestBucketize:
    def test_binarization_within_buckets(self):
        events = [
            EdgeEvent(0.5, "1", "2"),
            EdgeEvent(1.2, "1", "2"),
            EdgeEvent(1.7, "2", "1"),
        ]
        net = bucketize(events, typing_ab(), BucketingConfig(origin=0.0, width=1.0))
        assert net.T == 2
        assert net.snapshots[0] == frozenset({("1", "2")})
        assert net.snapshots[1] == frozenset({("1", "2")})

    def test_boundary_event_goes_to_later_bucket(self):
        events = [EdgeEvent(2.0, "1", "2")]
        net = bucketize(events, typing_ab(), BucketingConfig(origin=0.0, width=1.0))
        assert net.T == 3
        assert net.snapshots[1] == frozenset()
        assert net.snapshots[2] == frozenset({("1", "2")})

    def test_event_before_origin_rejected(self):
        events = [EdgeEvent(-0.1, "1", "2")]
        with pytest.raises(IngestError, match="precedes"):
            bucketize(events, typing_ab(), BucketingConfig(origin=0.0, width=1.0))

    def test_cap_drops_late_events(self):
        events = [EdgeEvent(0.5, "1", "2"), EdgeEvent(9.5, "1", "3")]
        net = bucketize(events, typing_ab(), BucketingConfig(origin=0.0, width=1.0, T=2))
        assert net.T == 2
        assert net.total_edges(1) == 1
        assert net.total_edges(2) == 0

    def test_missing_observation_policy(self):
        events = [EdgeEvent(0.5, "1", "2"), EdgeEvent(2.5, "1", "3")]
        config = BucketingConfig(
            origin=0.0, width=1.0, missing_policy=MISSING_OBSERVATION
        )
        net = bucketize(events, typing_ab(), config)
        assert net.missing == frozenset({2})
        series = extract_block_series(net)
        assert all(np.isnan(s.counts[1]) for s in series)

    def test_empty_graph_policy_keeps_zero(self):
        events = [EdgeEvent(0.5, "1", "2"), EdgeEvent(2.5, "1", "3")]
        net = bucketize(events, typing_ab(), BucketingConfig(origin=0.0, width=1.0))
        assert net.missing == frozenset()
        assert net.total_edges(2) == 0

    def test_conservation_of_bucket_pair_memberships(self, rng):
        # every in-range event is represented by exactly one
        # (bucket, pair) membership
        from sdsbm.graph_model import VertexTyping

        vertices = [str(i) for i in range(1, 21)]
        typing = VertexTyping(
            vertex_ids=tuple(vertices),
            type_of={v: "a" if int(v) % 2 else "b" for v in vertices},
        )
        idx = rng.integers(0, 20, size=(100_000, 2))
        idx = idx[idx[:, 0] != idx[:, 1]]
        times = rng.uniform(0, 500, size=idx.shape[0])
        events = [
            EdgeEvent(float(ts), vertices[i], vertices[j])
            for ts, (i, j) in zip(times, idx)
        ]
        net = bucketize(events, typing, BucketingConfig(origin=0.0, width=1.0))
        expected = {
            (int(np.floor(e.timestamp)) + 1, tuple(sorted((e.src, e.dst), key=int)))
            for e in events
        }
        total = sum(net.total_edges(t) for t in range(1, net.T + 1))
        assert total == len(expected)


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(12))))
def test_bucketize_is_order_insensitive(order):
    base = [
        EdgeEvent(float(t) + 0.25 * (i % 3), u, v)
        for i, (t, u, v) in enumerate(
            [(0, "1", "2"), (0, "2", "3"), (1, "1", "3"), (2, "1", "2")] * 3
        )
    ]
    shuffled = [base[i] for i in order]
    cfg = BucketingConfig(origin=0.0, width=1.0)
    assert bucketize(shuffled, typing_ab(), cfg).snapshots == bucketize(
        base, typing_ab(), cfg
    ).snapshots


def example_params(d=3, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    return ModelParams(
        d=d,
        q_m=float(rng.uniform(1e-7, 1e-3)),
        q_s=float(rng.uniform(1e-7, 1e-3)),
        r=float(rng.uniform(0, 1e-3)),
        mu0=rng.normal(size=d),
        Sigma0=0.01 * (A @ A.T + np.eye(d)),
    )


class TestModelPersistence:
    def test_round_trip_is_bit_exact(self, tmp_path):
        params = {("a", "a"): example_params(seed=1), ("a", "b"): example_params(seed=2)}
        ns = {("a", "a"): 496, ("a", "b"): 512}
        path = tmp_path / "model.json"
        save_model(params, ns, path)
        loaded, loaded_ns = load_model(path)
        assert loaded_ns == ns
        for pair, p in params.items():
            q = loaded[pair]
            assert (q.d, q.q_m, q.q_s, q.r) == (p.d, p.q_m, p.q_s, p.r)
            np.testing.assert_array_equal(q.mu0, p.mu0)
            np.testing.assert_array_equal(q.Sigma0, p.Sigma0)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        save_model({("a", "a"): example_params()}, {("a", "a"): 10}, path)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelVersionError, match="99"):
            load_model(path)

    def test_truncated_file_fails_checksum(self, tmp_path):
        path = tmp_path / "model.json"
        save_model({("a", "a"): example_params()}, {("a", "a"): 10}, path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ModelChecksumError):
            load_model(path)

    def test_tampered_content_fails_checksum(self, tmp_path):
        path = tmp_path / "model.json"
        save_model({("a", "a"): example_params()}, {("a", "a"): 10}, path)
        doc = json.loads(path.read_text())
        doc["blocks"][0]["q_m"] = 0.123
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelChecksumError, match="checksum"):
            load_model(path)

    def test_mixed_periods_rejected(self, tmp_path):
        params = {("a", "a"): example_params(d=3), ("a", "b"): example_params(d=4)}
        with pytest.raises(ValueError, match="disagree"):
            save_model(params, {("a", "a"): 10, ("a", "b"): 10}, tmp_path / "m.json")
