import sys
import textwrap

import numpy as np
import pytest

from retag.errors import DimDriftError, ProviderError, ProviderTimeoutError
from retag.provider import (
    MockProvider,
    ProviderClient,
    parse_provider_spec,
)

MOCK_SERVER = [sys.executable, "-m", "retag.provider", "--seed", "0", "--dim", "32"]


class TestMockProvider:
    def test_determinism(self, mock):
        a = mock.embed_texts("joint-text", ["a photo of a cat"])
        b = mock.embed_texts("joint-text", ["a photo of a cat"])
        assert np.array_equal(a, b)

    def test_identical_texts_identical_rows(self, mock):
        rows = mock.embed_texts("joint-text", ["cat", "cat"])
        assert np.array_equal(rows[0], rows[1])

    def test_unit_norm(self, mock):
        rows = mock.embed_texts("joint-text", ["x", "a cat", "many words here"])
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-3)

    def test_planted_cluster_structure(self, mock):
        cat1 = mock.embed_texts("joint-text", ["a photo of a cat"])[0]
        cat2 = mock.embed_texts("joint-text", ["my sleepy kitten rests"])[0]
        dog = mock.embed_texts("joint-text", ["a photo of a dog"])[0]
        assert float(cat1 @ cat2) > 0.8
        assert float(cat1 @ dog) < 0.6

    def test_empty_texts_rejected(self, mock):
        with pytest.raises(ProviderError) as exc:
            mock.embed_texts("joint-text", [])
        assert exc.value.code == "invalid_request"

    def test_image_by_stem(self, mock, tmp_path):
        path = tmp_path / "cat_0001.png"
        path.write_bytes(b"not really a png")
        emb = mock.embed_image(path)
        anchor = mock.concept_vector("cat", "joint-image")
        assert float(emb @ anchor) > 0.9

    def test_missing_image(self, mock, tmp_path):
        with pytest.raises(ProviderError) as exc:
            mock.embed_image(tmp_path / "none.png")
        assert exc.value.code == "io"

    def test_same_image_same_embedding(self, mock, tmp_path):
        path = tmp_path / "dog.png"
        path.write_bytes(b"bytes")
        assert np.array_equal(mock.embed_image(path), mock.embed_image(path))

    def test_sentence_space_separate(self, mock):
        joint = mock.embed_texts("joint-text", ["cat"])[0]
        sent = mock.embed_texts("sentence", ["cat"])[0]
        assert not np.allclose(joint, sent)


class TestClientOverStdio:
    def test_handshake_and_roles(self):
        with ProviderClient(command=MOCK_SERVER) as client:
            assert client.name == "mock"
            assert client.roles["joint-text"] == 32
            assert client.roles["joint-image"] == 32

    def test_embed_texts_matches_inprocess(self):
        inproc = MockProvider(seed=0, dim=32)
        with ProviderClient(command=MOCK_SERVER) as client:
            remote = client.embed_texts("joint-text", ["a cat", "a dog"])
        local = inproc.embed_texts("joint-text", ["a cat", "a dog"])
        assert np.allclose(remote, local, atol=1e-6)

    def test_order_preserved(self):
        with ProviderClient(command=MOCK_SERVER) as client:
            rows = client.embed_texts("joint-text", [f"word{i}" for i in range(10)])
            single = client.embed_texts("joint-text", ["word7"])[0]
        assert np.allclose(rows[7], single, atol=1e-6)

    def test_empty_texts_error(self):
        with ProviderClient(command=MOCK_SERVER) as client:
            with pytest.raises(ProviderError) as exc:
                client.embed_texts("joint-text", [])
            assert exc.value.code == "invalid_request"

    def test_embed_image_path(self, tmp_path):
        path = tmp_path / "cat_photo.png"
        path.write_bytes(b"fake")
        with ProviderClient(command=MOCK_SERVER) as client:
            emb = client.embed_image(str(path))
        assert emb.shape == (32,)
        assert abs(float(np.linalg.norm(emb)) - 1.0) < 1e-3

    def test_missing_image_error_code(self, tmp_path):
        with ProviderClient(command=MOCK_SERVER) as client:
            with pytest.raises(ProviderError) as exc:
                client.embed_image(str(tmp_path / "missing.png"))
        assert exc.value.code == "io"

    def test_unknown_op_error_code(self):
        with ProviderClient(command=MOCK_SERVER) as client:
            with pytest.raises(ProviderError) as exc:
                client._request({"op": "frobnicate"})
            assert exc.value.code == "bad_op"

    def test_batching_large_request(self):
        with ProviderClient(command=MOCK_SERVER) as client:
            rows = client.embed_texts("joint-text", [f"t{i}" for i in range(300)])
        assert rows.shape == (300, 32)


def _script_server(tmp_path, body: str):
    path = tmp_path / "server.py"
    path.write_text(textwrap.dedent(body), encoding="utf-8")
    return [sys.executable, str(path)]


class TestClientEdgeCases:
    def test_out_of_order_responses(self, tmp_path):
        # The server pushes a response for an unrelated id before the one
        # that answers the request, forcing id re-association.
        cmd = _script_server(
            tmp_path,
            """
            import json, sys
            for line in sys.stdin:
                msg = json.loads(line)
                if msg.get("op") == "hello":
                    print(json.dumps({"roles": {"joint-text": 2}, "name": "ooo"}), flush=True)
                    continue
                rid = msg["id"]
                decoy = {"id": rid + 1000, "embeddings": [[0.0, 1.0]]}
                real = {"id": rid, "embeddings": [[1.0, 0.0] for _ in msg["texts"]]}
                print(json.dumps(decoy), flush=True)
                print(json.dumps(real), flush=True)
            """,
        )
        with ProviderClient(command=cmd) as client:
            rows = client.embed_texts("joint-text", ["a", "b"])
            assert np.allclose(rows, [[1.0, 0.0], [1.0, 0.0]], atol=1e-6)
            again = client.embed_texts("joint-text", ["c"])
            assert np.allclose(again, [[1.0, 0.0]], atol=1e-6)

    def test_dim_drift_detected(self, tmp_path):
        cmd = _script_server(
            tmp_path,
            """
            import json, sys
            for line in sys.stdin:
                msg = json.loads(line)
                if msg.get("op") == "hello":
                    print(json.dumps({"roles": {"joint-text": 4}, "name": "drift"}), flush=True)
                    continue
                print(json.dumps({"id": msg["id"], "embeddings": [[1.0, 0.0]]}), flush=True)
            """,
        )
        with ProviderClient(command=cmd) as client:
            with pytest.raises(DimDriftError):
                client.embed_texts("joint-text", ["x"])

    def test_renormalization_counted(self, tmp_path):
        cmd = _script_server(
            tmp_path,
            """
            import json, sys
            for line in sys.stdin:
                msg = json.loads(line)
                if msg.get("op") == "hello":
                    print(json.dumps({"roles": {"joint-text": 2}, "name": "off"}), flush=True)
                    continue
                print(json.dumps({"id": msg["id"], "embeddings": [[3.0, 4.0]]}), flush=True)
            """,
        )
        with ProviderClient(command=cmd) as client:
            rows = client.embed_texts("joint-text", ["x"])
            assert np.allclose(rows[0], [0.6, 0.8], atol=1e-6)
            assert client.renormalized == 1

    def test_stdio_timeout(self, tmp_path):
        # Answers the handshake, then goes silent.
        cmd = _script_server(
            tmp_path,
            """
            import json, sys, time
            for line in sys.stdin:
                msg = json.loads(line)
                if msg.get("op") == "hello":
                    print(json.dumps({"roles": {"joint-text": 2}, "name": "slow"}), flush=True)
                    continue
                time.sleep(60)
            """,
        )
        with ProviderClient(command=cmd, timeout=0.5) as client:
            with pytest.raises(ProviderTimeoutError):
                client.embed_texts("joint-text", ["x"])

    def test_tcp_transport(self):
        import threading

        from retag.provider import serve_tcp

        provider = MockProvider(seed=0, dim=16)
        ready = {}
        event = threading.Event()

        def run():
            try:
                serve_tcp(provider, "127.0.0.1", 0,
                          ready_callback=lambda p: (ready.update(port=p), event.set()))
            except OSError:
                pass

        thread = threading.Thread(target=run, daemon=True)
        thread.start()
        assert event.wait(timeout=10)
        client = ProviderClient(host="127.0.0.1", port=ready["port"])
        try:
            rows = client.embed_texts("joint-text", ["a cat"])
            local = provider.embed_texts("joint-text", ["a cat"])
            assert np.allclose(rows, local, atol=1e-6)
        finally:
            client.close()


class TestParseProviderSpec:
    def test_mock_spec(self):
        provider = parse_provider_spec("mock:7")
        assert isinstance(provider, MockProvider)
        assert provider.seed == 7

    def test_command_spec(self):
        provider = parse_provider_spec(" ".join(MOCK_SERVER))
        try:
            assert provider.roles["joint-text"] == 32
        finally:
            provider.close()
