import numpy as np
import pytest

from gnnbench.graph import Graph, NodeTable

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    marker = props.get("criterion")
    if not marker:
        return
    entry = _CRITERIA.setdefault(marker[0], {"title": marker[1], "outcomes": [], "time": 0.0,
                                             "details": []})
    entry["outcomes"].append(report.outcome)
    entry["time"] += report.duration
    if props.get("detail"):
        entry["details"].append(props["detail"])


@pytest.fixture(autouse=True)
def _criterion_property(request, record_property):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        record_property("criterion", m.args)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion: FAIL if any of its tests failed, SKIP if all skipped."""
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        outs = e["outcomes"]
        if "failed" in outs:
            status = "FAIL"
        elif "passed" in outs:
            status = "PASS"
        else:
            status = "SKIP"
        note = f"{len(outs)} test(s)"
        if "skipped" in outs and status != "SKIP":
            note += f", {outs.count('skipped')} skipped"
        details = "; ".join(e["details"])
        line = f"[{status}] criterion {number}: {e['title']} ({e['time']:.1f}s, {note})"
        terminalreporter.write_line(line + (f" {details}" if details else ""))


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` with respect to ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * h)
    return out


def random_graph(rng, n, p=0.3, weighted=False):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    w = rng.uniform(0.5, 2.0, len(edges)) if weighted else np.ones(len(edges))
    return Graph([f"n{i}" for i in range(n)], edges, w)


@pytest.fixture
def triangle():
    g = Graph(["A", "B", "C"], np.array([[0, 1], [1, 2], [0, 2]]), np.ones(3))
    t = NodeTable(np.array([[1.0], [2.0], [3.0]]), np.array([1, 0, 0]))
    return g, t


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return _write


@pytest.fixture
def planted(tmp_path):
    """Small planted dataset on disk plus a config writer: ``planted(**overrides) -> path``."""
    from gnnbench.synthetic import planted_communities, write_dataset

    g, t = planted_communities(n=60, p_in=0.2, p_out=0.02, seed=1)
    write_dataset(g, t, tmp_path / "edges.csv", tmp_path / "nodes.csv")

    def _config(name="exp", **overrides):
        import json
        raw = {"name": name, "edge_csv": "edges.csv", "node_csv": "nodes.csv",
               "models": ["gcn", "lr"], "output_dir": f"out_{name}", "epochs": 5, "replicates": 2}
        raw.update(overrides)
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(raw), encoding="utf-8")
        return path
    return _config
