"""tlsherd: cluster malicious TLS flows and flag lookalikes, no decryption needed."""

from __future__ import annotations

__version__ = "0.1.0"
