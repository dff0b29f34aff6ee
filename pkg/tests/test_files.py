import json

import numpy as np
import pydot
import pytest

from routenas import files
from routenas import space as sp
from routenas.arch import ArchState
from routenas.data import SyntheticSpec, gen_synthetic
from routenas.numerics import Param, make_rng


def random_route(cfg, rng):
    return tuple(int(rng.integers(sp.subspace_size(cfg))) for _ in range(sp.block_count(cfg)))


def test_route_json_round_trip():
    rng = make_rng(0)
    for i in range(1000):
        cfg = sp.SpaceConfig(L=int(rng.integers(1, 4)), H=int(rng.integers(1, 5)), T=int(rng.integers(1, 4)),
                             d_v=3, d_root=5, query_policy=sp.QUERY_POLICIES[i % 3], gate_mode=sp.GATE_MODES[i % 2])
        u = random_route(cfg, rng)
        doc = json.loads(json.dumps(files.route_to_json(cfg, u)))
        assert files.route_from_json(doc) == (cfg, u)


def test_route_json_rejects_bad_documents(tmp_path):
    cfg = sp.SpaceConfig(L=2, H=2, T=2, d_v=3, d_root=3)
    good = files.route_to_json(cfg, (1, 2, 3, 4))
    bad_version = dict(good, schema_version=2)
    bad_index = json.loads(json.dumps(good))
    bad_index["blocks"][0]["route_index"] = 5
    short = dict(good, blocks=good["blocks"][:3])
    for doc in (bad_version, bad_index, short, {"blocks": []}):
        with pytest.raises(files.SchemaError):
            files.route_from_json(doc)
    p = tmp_path / "r.json"
    p.write_text("{not json")
    with pytest.raises(files.SchemaError):
        files.read_route(p)


def test_route_json_file_and_probabilities(tmp_path):
    cfg = sp.SpaceConfig(L=1, H=2, T=2, d_v=3, d_root=3)
    arch = ArchState.uniform([sp.subspace_size(cfg)] * 2)
    files.write_route(tmp_path / "r.json", cfg, (0, 5), arch.probs())
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["blocks"][1]["probability"] == pytest.approx(1 / 9)
    assert files.read_route(tmp_path / "r.json") == (cfg, (0, 5))


def test_checkpoint_round_trip(tmp_path):
    params = {"a/W": Param(make_rng(0).normal(size=(2, 3))), "b": Param(np.ones((1, 1)))}
    arch = ArchState.uniform([3, 2])
    arch.alpha[0].value[0, 1] = 0.25
    arch.baseline.update(2.0)
    files.save_checkpoint(tmp_path / "c.npz", params, arch, dict(step=7))
    arrays, meta = files.load_checkpoint(tmp_path / "c.npz")
    np.testing.assert_array_equal(arrays["a/W"], params["a/W"].value)
    np.testing.assert_array_equal(arrays["arch/block/0/alpha"], [[0, 0.25, 0]])
    assert arrays["arch/baseline"][0] == 2.0 and meta["step"] == 7


def test_step_log_header_and_rows(tmp_path):
    rows = [dict(step=0, phase="warmup", mtl_train_loss=0.5, reward=float("nan"), baseline=0.0,
                 entropy_mean=1.0, sampled_route=(1, 0, 2))]
    files.write_step_log(tmp_path / "s.csv", rows)
    text = (tmp_path / "s.csv").read_text().splitlines()
    assert text[0].startswith("# generated ")
    assert text[1] == ",".join(files.STEP_LOG_COLUMNS)
    back = files.read_csv_rows(tmp_path / "s.csv")
    assert back[0]["sampled_route"] == "1;0;2" and back[0]["reward"] == "nan"


def dot_graph(cfg, u):
    text = files.route_to_dot(cfg, u)
    (graph,) = pydot.graph_from_dot_data(text)
    return graph


@pytest.mark.parametrize("L,H,T", [(1, 1, 1), (2, 2, 2), (2, 4, 2), (3, 3, 3)])
def test_dot_parses_with_expected_nodes(L, H, T):
    cfg = sp.SpaceConfig(L=L, H=H, T=T, d_v=3, d_root=3)
    u = random_route(cfg, make_rng(L * 100 + H))
    g = dot_graph(cfg, u)
    names = {n.get_name() for n in g.get_nodes()} - {"node", "edge", "graph"}
    assert len(names) == 2 + L * H + T


def test_dot_share_bottom_is_single_chain():
    cfg = sp.SpaceConfig(L=3, H=2, T=2, d_v=3, d_root=3)
    g = dot_graph(cfg, sp.reference_route("share_bottom_like", cfg))
    edges = sorted((e.get_source(), e.get_destination()) for e in g.get_edges())
    assert edges == sorted([("input", "root"), ("root", "s1"), ("s1", "s3"), ("s3", "s5"),
                            ("s5", "task0"), ("s5", "task1")])


def test_dot_marks_query_edges():
    cfg = sp.SpaceConfig(L=1, H=2, T=1, d_v=3, d_root=3, query_policy="root_only")
    g = dot_graph(cfg, (2,))  # subset {0,1}, root query
    dashed = [(e.get_source(), e.get_destination()) for e in g.get_edges() if e.get("style") == "dashed"]
    assert dashed == [("root", "task0")]


def test_dataset_directory_round_trip(tmp_path):
    ds = gen_synthetic(SyntheticSpec(d=5, n=30, seed=2))
    files.save_dataset(tmp_path / "d", ds)
    back = files.load_dataset(tmp_path / "d")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.Y, ds.Y)
    assert back.meta["w1"] == ds.meta["w1"]
