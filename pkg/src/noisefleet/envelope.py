"""Snippet packaging and certificate-gated decryption.

A 10 s PCM snippet is losslessly compressed, encrypted with a fresh AES-256-GCM
key, and the key wrapped with the recipient's RSA-2048-OAEP public key. The
container on the wire is a gzipped tar with members ``audio.flac.enc``,
``key.enc`` and ``meta.json``. No FLAC encoder ships with this package, so the
default codec behind the codec id is a second-order-delta + zlib coder (bit
exact on round trip); the member name stays fixed by the wire format.

Decryption requires a currently valid access certificate signed by the project
authority; no key material is unwrapped otherwise.
"""

from __future__ import annotations

import io
import json
import tarfile
import zlib
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AccessDeniedError, AuthenticationError, DomainError, PackagingError

SNIPPET_DURATION_S = 10
SNIPPET_SAMPLES = SNIPPET_DURATION_S * 48000
SNIPPET_RAW_BYTES = SNIPPET_SAMPLES * 2

CODEC_ID = "pcm16-delta-zlib"
CIPHER_ID = "aes-256-gcm+rsa-2048-oaep"

_NONCE_BYTES = 12
_KEY_BYTES = 32


def generate_recipient_keypair():
    """RSA-2048 pair; the private half lives only on the decryption server."""
    private = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    return private, private.public_key()


def compress_pcm(samples: np.ndarray) -> bytes:
    """Lossless coder: first-order delta in wrapping int16, then zlib.

    The delta wraps modulo 2^16, which the int16 cumsum on decode undoes
    exactly, so the round trip is bit exact for any input.
    """
    x = np.asarray(samples, dtype=np.int16)
    d = np.diff(x, prepend=np.int16(0))
    return zlib.compress(d.astype("<i2").tobytes(), level=1)


def decompress_pcm(blob: bytes) -> np.ndarray:
    d = np.frombuffer(zlib.decompress(blob), dtype="<i2")
    return np.cumsum(d, dtype=np.int64).astype(np.int16)


@dataclass(frozen=True)
class SnippetContainer:
    sensor_id: str
    capture_time_ms: int
    payload: bytes
    wrapped_key: bytes
    codec: str = CODEC_ID
    cipher: str = CIPHER_ID

    def to_bytes(self) -> bytes:
        meta = json.dumps(
            {
                "sensor_id": self.sensor_id,
                "ts_ms": self.capture_time_ms,
                "codec": self.codec,
                "cipher": self.cipher,
            },
            sort_keys=True,
        ).encode()
        buf = io.BytesIO()
        with tarfile.open(fileobj=buf, mode="w:gz", format=tarfile.USTAR_FORMAT) as tar:
            for name, blob in (
                ("audio.flac.enc", self.payload),
                ("key.enc", self.wrapped_key),
                ("meta.json", meta),
            ):
                info = tarfile.TarInfo(name)
                info.size = len(blob)
                info.mtime = self.capture_time_ms // 1000
                info.uid = info.gid = 0
                info.uname = info.gname = ""
                tar.addfile(info, io.BytesIO(blob))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SnippetContainer":
        try:
            with tarfile.open(fileobj=io.BytesIO(data), mode="r:gz") as tar:
                payload = tar.extractfile("audio.flac.enc").read()
                wrapped = tar.extractfile("key.enc").read()
                meta = json.loads(tar.extractfile("meta.json").read())
        except (tarfile.TarError, KeyError, AttributeError, json.JSONDecodeError) as exc:
            raise PackagingError(f"unreadable snippet container: {exc}") from exc
        return cls(
            sensor_id=meta["sensor_id"],
            capture_time_ms=meta["ts_ms"],
            payload=payload,
            wrapped_key=wrapped,
            codec=meta["codec"],
            cipher=meta["cipher"],
        )


def package_snippet(
    pcm: np.ndarray,
    recipient_public_key,
    rng: np.random.Generator,
    sensor_id: str = "N00",
    capture_time_ms: int = 0,
) -> SnippetContainer:
    """Compress, encrypt, and wrap one 10 s snippet.

    The AES key and GCM nonce are drawn from ``rng`` so a seeded run is
    reproducible end to end; two calls on the same pcm still yield different
    ciphertext because the rng state advances.
    """
    pcm = np.asarray(pcm)
    if pcm.size != SNIPPET_SAMPLES:
        raise DomainError(
            f"snippet must be exactly {SNIPPET_DURATION_S} s at 48 kHz "
            f"({SNIPPET_SAMPLES} samples), got {pcm.size}"
        )
    key = rng.bytes(_KEY_BYTES)
    nonce = rng.bytes(_NONCE_BYTES)
    if len(key) != _KEY_BYTES:
        raise PackagingError("symmetric key generation failed")
    compressed = compress_pcm(pcm)
    ciphertext = AESGCM(key).encrypt(nonce, compressed, None)
    wrapped = recipient_public_key.encrypt(
        key,
        padding.OAEP(
            mgf=padding.MGF1(algorithm=hashes.SHA256()),
            algorithm=hashes.SHA256(),
            label=None,
        ),
    )
    return SnippetContainer(
        sensor_id=sensor_id,
        capture_time_ms=capture_time_ms,
        payload=nonce + ciphertext,
        wrapped_key=wrapped,
    )


@dataclass(frozen=True)
class AccessCertificate:
    """Authorization to release decrypted audio, signed by the project authority."""

    subject: str
    expiry_ts: int
    signature: bytes

    def signed_payload(self) -> bytes:
        return f"{self.subject}|{self.expiry_ts}".encode()


def generate_authority_keypair():
    private = ed25519.Ed25519PrivateKey.generate()
    return private, private.public_key()


def issue_certificate(subject: str, expiry_ts: int, authority_private_key) -> AccessCertificate:
    payload = f"{subject}|{expiry_ts}".encode()
    return AccessCertificate(subject, expiry_ts, authority_private_key.sign(payload))


def verify_certificate(cert: AccessCertificate, authority_public_key, now_ts: int) -> None:
    """Raises AccessDeniedError unless the signature verifies and now < expiry."""
    try:
        authority_public_key.verify(cert.signature, cert.signed_payload())
    except InvalidSignature as exc:
        raise AccessDeniedError(f"certificate for {cert.subject!r} not signed by authority") from exc
    if now_ts >= cert.expiry_ts:
        raise AccessDeniedError(f"certificate for {cert.subject!r} expired")


def decrypt_snippet(
    container: SnippetContainer,
    cert: AccessCertificate,
    private_key,
    authority_public_key,
    now_ts: int,
) -> np.ndarray:
    """Certificate-gated inverse of package_snippet; returns the original PCM.

    A tampered payload raises AuthenticationError (GCM tag check), never a
    silently corrupted signal.
    """
    verify_certificate(cert, authority_public_key, now_ts)
    key = private_key.decrypt(
        container.wrapped_key,
        padding.OAEP(
            mgf=padding.MGF1(algorithm=hashes.SHA256()),
            algorithm=hashes.SHA256(),
            label=None,
        ),
    )
    nonce, ciphertext = container.payload[:_NONCE_BYTES], container.payload[_NONCE_BYTES:]
    try:
        compressed = AESGCM(key).decrypt(nonce, ciphertext, None)
    except InvalidTag as exc:
        raise AuthenticationError("snippet payload failed authentication") from exc
    try:
        return decompress_pcm(compressed)
    except zlib.error as exc:  # unreachable after a valid tag, kept as a guard
        raise AuthenticationError(f"payload decompression failed: {exc}") from exc


def serialize_private_key(private_key) -> bytes:
    return private_key.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )


def load_private_key(pem: bytes):
    return serialization.load_pem_private_key(pem, password=None)
