"""Bearer-token authentication: HS256 JSON Web Tokens and salted password hashes."""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import time
from typing import Optional, Tuple

DEFAULT_TOKEN_LIFETIME = 24 * 3600
_PBKDF2_ITERATIONS = 60_000


class AuthError(Exception):
    """Token missing, malformed, expired, or signed with the wrong key."""


def hash_password(password: str) -> Tuple[str, str]:
    """Returns (salt hex, PBKDF2-SHA256 hash hex) for storage."""
    salt = os.urandom(16).hex()
    digest = hashlib.pbkdf2_hmac(
        "sha256", password.encode("utf-8"), bytes.fromhex(salt), _PBKDF2_ITERATIONS
    )
    return salt, digest.hex()


def verify_password(password: str, salt: str, pw_hash: str) -> bool:
    digest = hashlib.pbkdf2_hmac(
        "sha256", password.encode("utf-8"), bytes.fromhex(salt), _PBKDF2_ITERATIONS
    )
    return hmac.compare_digest(digest.hex(), pw_hash)


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64url(text: str) -> bytes:
    padding = "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(text + padding)


def issue_token(
    secret: bytes,
    subject: str,
    lifetime: int = DEFAULT_TOKEN_LIFETIME,
    now: Optional[int] = None,
) -> Tuple[str, int]:
    """Issue an HS256 JWT for ``subject``; returns (token, expiry epoch seconds)."""
    issued = int(time.time()) if now is None else int(now)
    expires = issued + int(lifetime)
    header = _b64url(json.dumps({"alg": "HS256", "typ": "JWT"}, separators=(",", ":")).encode())
    payload = _b64url(
        json.dumps(
            {"sub": subject, "iat": issued, "exp": expires}, separators=(",", ":")
        ).encode()
    )
    signing_input = f"{header}.{payload}".encode("ascii")
    signature = _b64url(hmac.new(secret, signing_input, hashlib.sha256).digest())
    return f"{header}.{payload}.{signature}", expires


def verify_token(secret: bytes, token: str, now: Optional[int] = None) -> str:
    """Verify signature and expiry; returns the subject username."""
    parts = token.split(".")
    if len(parts) != 3:
        raise AuthError("malformed token")
    header_b64, payload_b64, signature_b64 = parts
    signing_input = f"{header_b64}.{payload_b64}".encode("ascii")
    expected = hmac.new(secret, signing_input, hashlib.sha256).digest()
    try:
        got = _unb64url(signature_b64)
    except Exception:
        raise AuthError("malformed token signature") from None
    if not hmac.compare_digest(expected, got):
        raise AuthError("bad token signature")
    try:
        payload = json.loads(_unb64url(payload_b64))
        subject = payload["sub"]
        expires = int(payload["exp"])
    except Exception:
        raise AuthError("malformed token payload") from None
    current = int(time.time()) if now is None else int(now)
    if current >= expires:
        raise AuthError("token expired")
    if not isinstance(subject, str) or not subject:
        raise AuthError("token has no subject")
    return subject
