import numpy as np
import pytest

from noisefleet.envelope import (
    SNIPPET_RAW_BYTES,
    SNIPPET_SAMPLES,
    AccessCertificate,
    SnippetContainer,
    compress_pcm,
    decompress_pcm,
    decrypt_snippet,
    generate_authority_keypair,
    generate_recipient_keypair,
    issue_certificate,
    package_snippet,
    verify_certificate,
)
from noisefleet.errors import AccessDeniedError, AuthenticationError, DomainError


@pytest.fixture(scope="module")
def recipient():
    return generate_recipient_keypair()


@pytest.fixture(scope="module")
def authority():
    return generate_authority_keypair()


@pytest.fixture()
def cert(authority):
    private, _ = authority
    return issue_certificate("analyst", expiry_ts=2_000_000_000, authority_private_key=private)


def random_pcm(seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(-32768, 32768, SNIPPET_SAMPLES, dtype=np.int16)


class TestCodec:
    def test_round_trip(self):
        pcm = random_pcm(1)
        assert np.array_equal(decompress_pcm(compress_pcm(pcm)), pcm)

    def test_silence_compresses(self):
        blob = compress_pcm(np.zeros(SNIPPET_SAMPLES, dtype=np.int16))
        assert len(blob) < SNIPPET_RAW_BYTES

    def test_tonal_signal_compresses(self):
        t = np.arange(SNIPPET_SAMPLES) / 48000.0
        pcm = (10000 * np.sin(2 * np.pi * 440 * t)).astype(np.int16)
        blob = compress_pcm(pcm)
        assert len(blob) < SNIPPET_RAW_BYTES
        assert np.array_equal(decompress_pcm(blob), pcm)


class TestPackaging:
    def test_round_trip_bit_exact(self, recipient, authority, cert):
        private, public = recipient
        _, auth_public = authority
        pcm = random_pcm(2)
        container = package_snippet(pcm, public, np.random.default_rng(9), "N07", 1234_000)
        out = decrypt_snippet(container, cert, private, auth_public, now_ts=0)
        assert np.array_equal(out, pcm)

    def test_fresh_keys_per_packaging(self, recipient):
        _, public = recipient
        pcm = random_pcm(3)
        rng = np.random.default_rng(4)
        a = package_snippet(pcm, public, rng)
        b = package_snippet(pcm, public, rng)
        assert a.payload != b.payload
        assert a.wrapped_key != b.wrapped_key

    def test_wrong_duration_rejected(self, recipient):
        _, public = recipient
        with pytest.raises(DomainError):
            package_snippet(np.zeros(48000, dtype=np.int16), public, np.random.default_rng(0))

    def test_wire_round_trip(self, recipient):
        _, public = recipient
        container = package_snippet(random_pcm(5), public, np.random.default_rng(5), "N02", 99_000)
        data = container.to_bytes()
        back = SnippetContainer.from_bytes(data)
        assert back == container
        assert data[:2] == b"\x1f\x8b"  # gzipped tar on the wire

    def test_container_members(self, recipient):
        import io
        import tarfile

        _, public = recipient
        data = package_snippet(random_pcm(6), public, np.random.default_rng(6)).to_bytes()
        with tarfile.open(fileobj=io.BytesIO(data), mode="r:gz") as tar:
            assert sorted(tar.getnames()) == ["audio.flac.enc", "key.enc", "meta.json"]


class TestDecryptionGate:
    def test_expired_certificate_denied(self, recipient, authority):
        private, public = recipient
        auth_private, auth_public = authority
        expired = issue_certificate("analyst", expiry_ts=100, authority_private_key=auth_private)
        container = package_snippet(random_pcm(7), public, np.random.default_rng(7))
        with pytest.raises(AccessDeniedError):
            decrypt_snippet(container, expired, private, auth_public, now_ts=200)

    def test_forged_certificate_denied(self, recipient, authority):
        private, public = recipient
        _, auth_public = authority
        rogue_private, _ = generate_authority_keypair()
        forged = issue_certificate("intruder", 2_000_000_000, rogue_private)
        container = package_snippet(random_pcm(8), public, np.random.default_rng(8))
        with pytest.raises(AccessDeniedError):
            decrypt_snippet(container, forged, private, auth_public, now_ts=0)

    def test_tampered_subject_denied(self, authority):
        auth_private, auth_public = authority
        cert = issue_certificate("analyst", 2_000_000_000, auth_private)
        tampered = AccessCertificate("admin", cert.expiry_ts, cert.signature)
        with pytest.raises(AccessDeniedError):
            verify_certificate(tampered, auth_public, now_ts=0)

    def test_single_bit_flip_fails_authentication(self, recipient, authority, cert):
        private, public = recipient
        _, auth_public = authority
        container = package_snippet(random_pcm(9), public, np.random.default_rng(10))
        flipped = bytearray(container.payload)
        flipped[len(flipped) // 2] ^= 0x01
        bad = SnippetContainer(
            sensor_id=container.sensor_id,
            capture_time_ms=container.capture_time_ms,
            payload=bytes(flipped),
            wrapped_key=container.wrapped_key,
        )
        with pytest.raises(AuthenticationError):
            decrypt_snippet(bad, cert, private, auth_public, now_ts=0)
