"""Tagger role over the wire: handshake, training, prediction, determinism.

The fixture corpus is synthetic: two entity classes with disjoint
vocabularies plus filler words, so a trained model that fails to reach
near-perfect accuracy on its own training set is broken, not unlucky.
"""

import base64
import random

import pytest

from seedner_plugin.models import PluginConfig, TrainedTagger
from seedner_plugin.protocol import Client, ProtocolError
from seedner_plugin.tagger_server import serve

PEOPLE = ["alira", "bromd", "cassun", "dretel", "ferin", "golvan",
          "hastra", "ilmek", "jorvas", "kelpin"]
PLACES = ["montby", "norvale", "oswick", "prenth", "quorton", "ristfall",
          "sulmere", "tarniss", "ulgrove", "vexham"]
FILLER = ["the", "a", "went", "to", "saw", "met", "near", "old", "quiet",
          "spoke", "with", "again", "yesterday", "market", "road"]

HP = {"learning_rate": 2e-3, "batch_size": 16, "epochs": 20,
      "gce_q": 0.7, "label_smoothing": 0.05, "seed": 7}


def build_segments(n=90, seed=29):
    rng = random.Random(seed)
    segments = []
    for _ in range(n):
        tokens = []
        for _ in range(rng.randint(1, 3)):
            tokens.extend((rng.choice(FILLER), "DT", "O")
                          for _ in range(rng.randint(1, 2)))
            kind = rng.random()
            if kind < 0.45:
                name = rng.choice(PEOPLE)
                tokens.append((name, "NNP", "B-PER"))
                if rng.random() < 0.4:
                    tokens.append((rng.choice(PEOPLE), "NNP", "I-PER"))
            elif kind < 0.9:
                tokens.append((rng.choice(PLACES), "NNP", "B-LOC"))
        tokens.append((rng.choice(FILLER), "DT", "O"))
        segments.append([list(t) for t in tokens])
    return segments


SEGMENTS = build_segments()


def train_request(client, segments=None, classes=None, hp=HP):
    stream = [{"tokens": seg} for seg in (segments or SEGMENTS)]
    return client.rpc("train", {"hyperparams": hp, "classes": classes},
                      stream=stream)


@pytest.fixture(scope="module")
def server():
    srv = serve("tcp:127.0.0.1:0", PluginConfig(encoder_model="tiny-random")).start()
    yield srv
    srv.stop()


@pytest.fixture(scope="module")
def client(server):
    with Client(server.endpoint) as c:
        c.hello()
        yield c


@pytest.fixture(scope="module")
def trained(client):
    return train_request(client)


# -------------------------------------------------------------- handshake

def test_handshake_advertises_calibrated_tagger(server):
    with Client(server.endpoint) as c:
        info = c.hello()
    assert info["role"] == "tagger"
    assert info["calibrated"] is True
    assert info["version"] == 1
    assert isinstance(info["name"], str) and info["name"]


def test_wrong_version_rejected(server):
    with Client(server.endpoint) as c:
        with pytest.raises(ProtocolError, match="version"):
            c.rpc("hello", {"version": 99})


# --------------------------------------------------------------- training

def test_train_response_shape(trained):
    assert trained["classes"] == ["LOC", "PER"]
    assert trained["model_id"].startswith("m")
    assert trained["signature"] == "plugin-encoder/1"
    assert len(base64.b64decode(trained["blob_b64"])) > 0


def test_memorizes_training_set(client, trained):
    total = correct = 0
    for seg in SEGMENTS:
        response = client.rpc(
            "predict",
            {"model_id": trained["model_id"]},
            stream=[{"tokens": [[t, p] for t, p, _ in seg]}])
        got = response["predictions"][0]["labels"]
        want = [lab for _, _, lab in seg]
        assert len(got) == len(want)
        total += len(want)
        correct += sum(g == w for g, w in zip(got, want))
    accuracy = correct / total
    assert accuracy >= 0.99, f"train-set token accuracy {accuracy:.4f}"


def test_training_is_byte_deterministic(client, trained):
    again = train_request(client)
    assert again["blob_b64"] == trained["blob_b64"]
    assert again["model_id"] == trained["model_id"]


def test_blob_reloads_to_equivalent_model(client, trained):
    model = TrainedTagger.from_blob(base64.b64decode(trained["blob_b64"]))
    seg = SEGMENTS[0]
    words = [t for t, _, _ in seg]
    response = client.rpc(
        "predict", {"model_id": trained["model_id"]},
        stream=[{"tokens": [[t, p] for t, p, _ in seg]}])
    assert model.predict(words)[0] == response["predictions"][0]["labels"]


def test_explicit_class_inventory_widens_tagset(client):
    response = train_request(client, classes=["LOC", "ORG", "PER"])
    assert response["classes"] == ["LOC", "ORG", "PER"]


def test_label_outside_inventory_rejected(client):
    with pytest.raises(ProtocolError, match="inventory"):
        train_request(client, classes=["LOC"])
    assert client.rpc("hello", {"version": 1})["role"] == "tagger"


def test_empty_train_rejected(client):
    with pytest.raises(ProtocolError, match="empty"):
        client.rpc("train", {"hyperparams": {}, "classes": None}, stream=[])


def test_dangling_continuation_label_rejected(client):
    bad = [[["x", "NNP", "I-PER"], ["y", "DT", "O"]]]
    with pytest.raises(ProtocolError, match="I-"):
        train_request(client, segments=bad)


def test_unknown_hyperparams_ignored(client):
    hp = dict(HP, epochs=1, exotic_knob=3.5)
    response = train_request(client, hp=hp)
    assert response["classes"] == ["LOC", "PER"]


# ------------------------------------------------------------- prediction

def test_prediction_invariants(client, trained):
    rng = random.Random(4)
    sentences = []
    for _ in range(25):
        words = [rng.choice(PEOPLE + PLACES + FILLER)
                 for _ in range(rng.randint(1, 12))]
        sentences.append([[w, "NNP"] for w in words])
    response = client.rpc(
        "predict", {"model_id": trained["model_id"]},
        stream=[{"tokens": s} for s in sentences])
    predictions = response["predictions"]
    assert len(predictions) == len(sentences)
    for sent, pred in zip(sentences, predictions):
        labels, spans = pred["labels"], pred["spans"]
        assert len(labels) == len(sent)
        # BIO validity
        prev = None
        for lab in labels:
            if lab.startswith("I-"):
                assert prev == lab[2:], labels
            prev = lab[2:] if lab != "O" else None
        # spans are exactly the entities of the label sequence
        expected = []
        i = 0
        while i < len(labels):
            if labels[i].startswith("B-"):
                cls = labels[i][2:]
                j = i + 1
                while j < len(labels) and labels[j] == f"I-{cls}":
                    j += 1
                expected.append([i, j, cls])
                i = j
            else:
                i += 1
        assert [[s, e, c] for s, e, c, _ in spans] == expected
        for _, _, _, confidence in spans:
            assert 0.0 <= confidence <= 1.0


def test_empty_sentence_predicts_empty(client, trained):
    response = client.rpc("predict", {"model_id": trained["model_id"]},
                          stream=[{"tokens": []}])
    assert response["predictions"] == [{"labels": [], "spans": []}]


def test_unknown_model_id_fails_but_session_survives(client, trained):
    with pytest.raises(ProtocolError, match="KeyError"):
        client.rpc("predict", {"model_id": "mdeadbeef"},
                   stream=[{"tokens": [["x", "NNP"]]}])
    response = client.rpc("predict", {"model_id": trained["model_id"]},
                          stream=[{"tokens": [["x", "NNP"]]}])
    assert len(response["predictions"]) == 1


def test_malformed_stream_line_fails_cleanly(client, trained):
    with pytest.raises(ProtocolError, match="tokens"):
        client.rpc("predict", {"model_id": trained["model_id"]},
                   stream=[{"wrong": 1}])
    assert client.rpc("hello", {"version": 1})["role"] == "tagger"


def test_negative_count_rejected(client):
    with pytest.raises(ProtocolError, match="count"):
        client.rpc("predict", {"model_id": "m0", "count": -1})
