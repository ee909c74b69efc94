"""Freeze canonical bytes of the bundled documents into fixtures/golden.json.

Run once after an intentional format change; the test-suite compares against
the frozen file and never rewrites it.
"""

from __future__ import annotations

import json

from gatekeeper.bundled import GOLDEN, golden_documents, golden_header
from gatekeeper.scr import canonical_serialize, scr_digest

vectors = [
    {"name": name, "canonical": canonical_serialize(doc).decode("utf-8"), "digest": scr_digest(doc)}
    for name, doc in golden_documents().items()
]
GOLDEN.write_text(json.dumps({**golden_header(), "vectors": vectors}, indent=1, ensure_ascii=True) + "\n",
                  encoding="utf-8")
print(f"froze {len(vectors)} vectors into {GOLDEN}")
