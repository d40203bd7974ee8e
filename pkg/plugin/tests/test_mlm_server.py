"""Masked-LM role over the wire: shapes, eligibility, determinism."""

import pytest

from seedner_plugin.models import PluginConfig
from seedner_plugin.mlm_server import serve
from seedner_plugin.protocol import Client, ProtocolError

TOKENS = ["the", "committee", "met", "X", "Y", "before", "the", "vote"]


@pytest.fixture(scope="module")
def server():
    srv = serve("tcp:127.0.0.1:0", PluginConfig(mlm_model="tiny-random")).start()
    yield srv
    srv.stop()


@pytest.fixture(scope="module")
def client(server):
    with Client(server.endpoint) as c:
        c.hello()
        yield c


def cloze(client, span, candidates, tokens=TOKENS):
    return client.rpc("cloze", {
        "tokens": tokens,
        "span": list(span),
        "candidates": [{"label": "ANY", "words": words} for words in candidates],
    })["results"]


def test_handshake_role(server):
    with Client(server.endpoint) as c:
        info = c.hello()
    assert info["role"] == "mlm"
    assert info["version"] == 1


def test_subword_counts_align_with_words(client):
    words = ["one", "two", "unusualword", "x"]
    response = client.rpc("subword_counts", {"words": words})
    counts = response["counts"]
    assert len(counts) == len(words)
    assert all(isinstance(c, int) and c >= 1 for c in counts)


def test_subword_counts_empty_list(client):
    assert client.rpc("subword_counts", {"words": []})["counts"] == []


def test_cloze_result_per_candidate(client):
    results = cloze(client, (3, 5),
                    [["alpha", "beta"], ["gamma", "delta"], ["epsilon"]])
    assert len(results) == 3
    assert results[0]["eligible"] is True
    assert results[1]["eligible"] is True
    assert results[2]["eligible"] is False  # one word for two slots


def test_candidate_longer_than_mask_ineligible(client):
    results = cloze(client, (3, 4), [["a", "b", "c"], ["solo"]])
    assert results[0]["eligible"] is False
    assert results[1]["eligible"] is True


def test_eligible_probs_shape_and_range(client):
    results = cloze(client, (3, 5), [["north", "ridge"], ["old", "mill"]])
    for result in results:
        probs = result["probs"]
        assert len(probs) == 2  # one per masked slot
        assert all(0.0 <= p <= 1.0 for p in probs)
    # distinct words should not all score identically
    flat = [p for r in results for p in r["probs"]]
    assert len(set(flat)) > 1


def test_repeated_calls_identical(client):
    first = cloze(client, (1, 2), [["assembly"], ["panel"], ["river"]])
    second = cloze(client, (1, 2), [["assembly"], ["panel"], ["river"]])
    assert first == second


def test_fresh_connection_identical(server, client):
    want = cloze(client, (1, 2), [["assembly"]])
    with Client(server.endpoint) as other:
        other.hello()
        got = cloze(other, (1, 2), [["assembly"]])
    assert got == want


def test_bad_span_rejected_session_survives(client):
    for span in [(5, 3), (0, 99), (-1, 2)]:
        with pytest.raises(ProtocolError, match="span"):
            cloze(client, span, [["x"]])
    assert client.rpc("subword_counts", {"words": ["ok"]})["counts"] == [1]


def test_bad_candidates_rejected(client):
    with pytest.raises(ProtocolError, match="candidate"):
        client.rpc("cloze", {"tokens": TOKENS, "span": [0, 1],
                             "candidates": [{"label": "X"}]})
    with pytest.raises(ProtocolError, match="words"):
        client.rpc("subword_counts", {"words": "notalist"})


def test_unknown_op_rejected(client):
    with pytest.raises(ProtocolError, match="unknown op"):
        client.rpc("embed", {"words": ["x"]})
