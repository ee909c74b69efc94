"""Regenerate the bundled fixture trees, tasks and scripts.

Golden vectors are written separately by ``scripts/freeze_golden.py`` so that
regenerating inputs never silently rewrites expected outputs.
"""

from __future__ import annotations

import json
import textwrap
from pathlib import Path

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "gatekeeper" / "fixtures"


def module_text(name: str, funcs: list[str], padding: int) -> str:
    parts = [f'"""Helpers for the {name} component."""\n', "from __future__ import annotations\n"]
    for n, fn in enumerate(funcs):
        body = "\n".join(
            f"    step_{k} = value * {k + n + 2} + offset  # accumulate stage {k}"
            for k in range(padding)
        )
        parts.append(textwrap.dedent(f"""
def {fn}(value: int, offset: int = 0) -> int:
    \"\"\"Return the staged result for {fn}.\"\"\"
""") + body + f"\n    return step_{padding - 1}\n")
    return "\n".join(parts)


def write_json(path: Path, obj: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def refactor() -> None:
    names = [
        ("app/__init__.py", None),
        ("app/billing.py", ["compute_total", "apply_discount", "round_cents"]),
        ("app/old_stats.py", ["tally_visits", "mean_visits"]),
        ("app/auth.py", ["hash_password", "check_password"]),
        ("app/cache.py", ["cache_get", "cache_put"]),
        ("app/config.py", ["load_settings", "merge_settings"]),
        ("app/db.py", ["open_session", "close_session"]),
        ("app/emails.py", ["render_email", "queue_email"]),
        ("app/export.py", ["to_csv", "to_xml"]),
        ("app/inventory.py", ["stock_level", "restock"]),
        ("app/orders.py", ["place_order", "cancel_order"]),
        ("app/search.py", ["index_item", "query_items"]),
        ("app/shipping.py", ["quote_shipping", "track_parcel"]),
        ("app/users.py", ["create_user", "disable_user"]),
        ("lib/dates.py", ["parse_date", "format_date"]),
        ("lib/money.py", ["to_minor_units", "from_minor_units"]),
        ("tests/test_orders.py", ["test_place", "test_cancel"]),
        ("tests/test_users.py", ["test_create", "test_disable"]),
        ("docs/guide.md", None),
        ("README.md", None),
    ]
    entries = []
    for mtime, (path, funcs) in enumerate(names, start=1):
        if funcs:
            text = module_text(path.split("/")[-1][:-3], funcs, padding=40)
        elif path.endswith(".md"):
            text = "\n".join(f"Paragraph {k}: this guide describes module layout and conventions."
                             for k in range(60)) + "\n"
        else:
            text = '"""Application package."""\n'
        entries.append({"path": path, "content": text, "mtime": mtime})
    assert len(entries) == 20
    write_json(FIXTURES / "refactor" / "tree.json", {"entries": entries})

    billing = entries[1]["content"]
    final = billing.replace("compute_total", "compute_sum")
    middle = billing.replace('"""Helpers for the billing component."""',
                             '"""Helpers for the billing component (v2)."""')
    changelog = "# Changelog\n\n- Renamed compute_total to compute_sum.\n- Removed old_stats.\n"
    write_json(FIXTURES / "refactor" / "task.json", {
        "description": "Rename compute_total to compute_sum in billing, delete the old stats "
                       "module, and add a changelog.",
        "subtasks": [
            {"type": "file-contains", "path": "app/billing.py", "literal": "def compute_sum("},
            {"type": "file-absent", "path": "app/old_stats.py"},
            {"type": "file-exists", "path": "CHANGELOG.md"},
        ],
        "max_steps": 12,
    })
    mutations = {
        "app/billing.py": {"edit": {"expected_digest": "@current", "content": final}},
        "app/old_stats.py": {"delete": {}},
        "CHANGELOG.md": {"write": {"content": changelog}},
    }
    write_json(FIXTURES / "refactor" / "plan.json", [{"requests": mutations}])
    # Second edit reuses the digest observed before the first one landed.
    stale = dict(mutations)
    stale["app/billing.py"] = {"edit": {"expected_digest": "@initial", "content": final}}
    write_json(FIXTURES / "refactor" / "stale_plan.json", [
        {"requests": {"app/billing.py": {"edit": {"expected_digest": "@current", "content": middle}}}},
        {"requests": stale},
        {"requests": {"app/billing.py": {"edit": {"expected_digest": "@current", "content": final}},
                      "app/old_stats.py": {"delete": {}},
                      "CHANGELOG.md": {"write": {"content": changelog}}}},
    ])


def demo() -> None:
    entries = [
        {"path": "README.md", "content": "# Demo\n\nA tiny tree for the command line.\n", "mtime": 1},
        {"path": "old.txt", "content": "obsolete\n", "mtime": 2},
        {"path": "src/a.txt", "content": "hello\n", "mtime": 3},
        {"path": "src/b.txt", "content": "world\n", "mtime": 4},
    ]
    write_json(FIXTURES / "demo" / "tree.json", {"entries": entries})
    write_json(FIXTURES / "demo" / "task.json", {
        "description": "Delete old.txt, greet everyone in src/a.txt, and add notes.txt.",
        "subtasks": [
            {"type": "file-absent", "path": "old.txt"},
            {"type": "file-contains", "path": "src/a.txt", "literal": "hello, everyone"},
            {"type": "file-exists", "path": "src/notes.txt"},
        ],
        "max_steps": 6,
    })
    write_json(FIXTURES / "demo" / "script.json", [
        {"requests": {"old.txt": {"delete": {}}}},
        {"requests": {
            "src/a.txt": {"edit": {"expected_digest": "@current", "content": "hello, everyone\n"}},
            "src/notes.txt": {"write": {"content": "remember the milk\n"}},
        }},
    ])


if __name__ == "__main__":
    refactor()
    demo()
