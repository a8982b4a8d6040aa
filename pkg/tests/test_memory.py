import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scripted import WALK_ROUTE_1, WALK_ROUTE_2, walkthrough_scene
from scenemem.memory import EpisodicMemory, Pooling, SnapshotError, ZeroMemory, pool
from scenemem.world import generate_scene, observe

D = 32


def walk(mem, scene, route, salt=0, sid=None):
    obs = []
    heading = 0.0
    for t, v in enumerate(route):
        if t > 0:
            heading = scene.heading(route[t - 1], v)
        ob = observe(scene, v, heading, noise_seed=1000 * salt + t)
        mem.update(sid or scene.scene_id, ob)
        obs.append(ob)
    return obs


def test_pool_examples():
    assert pool([[1, 2], [3, 4]], "mean").tolist() == [2, 3]
    assert pool([[1, 4], [3, 2]], Pooling.MAX).tolist() == [3, 4]
    v = np.array([[0.5, -1.0, 2.0]])
    assert np.array_equal(pool(v, "max"), v[0])
    assert np.array_equal(pool(v, "mean"), v[0])
    with pytest.raises(ValueError):
        pool(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        pool([[1, 2]], "median")


def test_first_visit_and_second_node():
    sc = walkthrough_scene()
    mem = EpisodicMemory(D)
    ob1 = observe(sc, 0, 0.0, 1)
    mem.update("walk", ob1)
    g = mem.graph("walk")
    assert set(g.nodes) == {0} and g.edges == set()
    assert len(ob1.candidates) == 4
    assert np.array_equal(g.nodes[0], ob1.features.max(axis=0))
    mem.update("walk", observe(sc, 1, 0.0, 2))
    assert set(mem.graph("walk").nodes) == {0, 1}
    assert mem.graph("walk").edges == {(0, 1)}


def test_revisit_is_noop():
    sc = walkthrough_scene()
    mem = EpisodicMemory(D)
    walk(mem, sc, [0, 1])
    before = mem.snapshot()
    mem.update("walk", observe(sc, 0, 1.3, noise_seed=999))
    assert mem.snapshot() == before


def test_walkthrough():
    sc = walkthrough_scene()
    mem = EpisodicMemory(D)
    walk(mem, sc, WALK_ROUTE_1)
    g = mem.graph("walk")
    assert set(g.nodes) == {0, 1, 2, 3, 4}
    assert g.edges == {(0, 1), (1, 2), (2, 3), (3, 4)}
    snaps = []
    obs = walk(mem, sc, WALK_ROUTE_2, salt=1)
    # replay step by step to check the final step changes nothing
    mem2 = EpisodicMemory(D)
    walk(mem2, sc, WALK_ROUTE_1)
    for ob in obs:
        snaps.append(mem2.snapshot())
        mem2.update("walk", ob)
    assert mem2.snapshot() == snaps[-1]
    assert mem2 == mem


def test_mean_pooling_mode():
    sc = walkthrough_scene()
    mem = EpisodicMemory(D, "mean")
    ob = observe(sc, 0, 0.0, 1)
    mem.update("walk", ob)
    np.testing.assert_allclose(mem.graph("walk").nodes[0], ob.features.mean(axis=0), rtol=0, atol=1e-15)


def test_retrieve():
    sc = walkthrough_scene()
    mem = EpisodicMemory(D)
    assert np.array_equal(mem.retrieve("walk", [0, 1, 2]), np.zeros((3, D)))
    obs = walk(mem, sc, [0, 1, 2])
    expected = {ob.viewpoint: ob.features.max(axis=0) for ob in obs}
    query = [5, 0, 8, 2, 1, 7]
    got = mem.retrieve("walk", query)
    for row, v in zip(got, query):
        assert np.array_equal(row, expected.get(v, np.zeros(D)))
    assert np.array_equal(mem.retrieve("elsewhere", [0]), np.zeros((1, D)))


def test_reset_scopes():
    sc = walkthrough_scene()
    mem = EpisodicMemory(D)
    walk(mem, sc, [0, 1], sid="A")
    walk(mem, sc, [3, 4], sid="B")
    mem.reset("A")
    assert mem.size("A") == (0, 0)
    assert set(mem.graph("B").nodes) == {3, 4}
    mem.reset()
    assert not mem.retrieve("B", [3, 4]).any()


def test_reset_then_replay_identical():
    sc = generate_scene(3, 12, 3)
    mem = EpisodicMemory(D)
    walk(mem, sc, [0] + list(sc.neighbors(0)[:1]))
    first = mem.snapshot()
    mem.reset()
    walk(mem, sc, [0] + list(sc.neighbors(0)[:1]))
    assert mem.snapshot() == first


def test_snapshot_roundtrip():
    assert EpisodicMemory.restore(EpisodicMemory(D).snapshot()) == EpisodicMemory(D)
    sc = generate_scene(5, 14, 3)
    mem = EpisodicMemory(D)
    rng = np.random.default_rng(0)
    v = 0
    for t in range(10):
        mem.update(sc.scene_id, observe(sc, v, 0.0, t))
        v = int(rng.choice(sc.neighbors(v)))
    back = EpisodicMemory.restore(mem.snapshot())
    everything = list(range(sc.n_nodes))
    assert np.array_equal(back.retrieve(sc.scene_id, everything), mem.retrieve(sc.scene_id, everything))
    assert back.graph(sc.scene_id).edges == mem.graph(sc.scene_id).edges


@pytest.mark.parametrize(
    "blob",
    [
        b"\xff\xfe",
        b"{}",
        b'{"format":"scenemem-memory","version":9,"d":2,"pooling":"max","scenes":{}}',
        b'{"format":"scenemem-memory","version":1,"d":2,"pooling":"max","scenes":{"s":{"nodes":[[0,[1.0]]],"edges":[]}}}',
        b'{"format":"scenemem-memory","version":1,"d":1,"pooling":"max","scenes":{"s":{"nodes":[[0,[1.0]]],"edges":[[0,4]]}}}',
    ],
)
def test_restore_rejects_corrupt(blob):
    sc = walkthrough_scene()
    mem = EpisodicMemory(D)
    walk(mem, sc, [0, 1])
    before = mem.snapshot()
    with pytest.raises(SnapshotError):
        EpisodicMemory.restore(blob)
    assert mem.snapshot() == before


def test_zero_memory():
    sc = walkthrough_scene()
    z = ZeroMemory(D)
    walk(z, sc, [0, 1, 2])
    assert z.size("walk") == (0, 0)
    assert not z.retrieve("walk", [0, 1, 2]).any()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 5000), steps=st.lists(st.integers(0, 7), min_size=1, max_size=25))
def test_memory_properties(seed, steps):
    sc = generate_scene(seed, 10, 3)
    mem = EpisodicMemory(D)
    v = 0
    prev_nodes: set = set()
    prev_edges: set = set()
    recorded = {}
    for t, choice in enumerate(steps):
        ob = observe(sc, v, 0.0, t)
        known = v in mem.graph(sc.scene_id).nodes
        before = mem.snapshot()
        mem.update(sc.scene_id, ob)
        if known:
            assert mem.snapshot() == before
        else:
            recorded[v] = ob.features.max(axis=0)
        g = mem.graph(sc.scene_id)
        assert set(g.nodes) >= prev_nodes and g.edges >= prev_edges
        for a, b in g.edges:
            assert a in g.nodes and b in g.nodes
            assert sc.has_edge(a, b)
        prev_nodes, prev_edges = set(g.nodes), set(g.edges)
        nb = sc.neighbors(v)
        v = nb[choice % len(nb)]
    for node, m in recorded.items():
        assert np.array_equal(mem.graph(sc.scene_id).nodes[node], m)


@settings(max_examples=20, deadline=None)
@given(perm=st.permutations([0, 1, 2, 3, 4]))
def test_node_set_order_insensitive(perm):
    sc = walkthrough_scene()
    mem = EpisodicMemory(D)
    for v in perm:
        mem.update("walk", observe(sc, v, 0.0, 0))
    g = mem.graph("walk")
    assert set(g.nodes) == {0, 1, 2, 3, 4}
    assert g.edges == {(a, b) for a, b in sc.edges if a in g.nodes and b in g.nodes}
