"""Mock external tool server speaking the adapter protocol on stdio.

Run with `python -m formforge.tools.mock_adapter`. Serves `adapter_echo`
and `adapter_sleep`, which is all the harness tests need.
"""

from __future__ import annotations

import json
import sys
import time


def serve() -> None:
    for raw in sys.stdin:
        raw = raw.strip()
        if not raw:
            continue
        request: dict | None = None
        try:
            request = json.loads(raw)
            tool = request["tool"]
            args = request.get("args", {})
            if tool == "adapter_echo":
                response = {"id": request["id"], "ok": True, "result": args["text"]}
            elif tool == "adapter_sleep":
                time.sleep(float(args["seconds"]))
                response = {"id": request["id"], "ok": True, "result": "slept"}
            else:
                response = {
                    "id": request["id"],
                    "ok": False,
                    "error": f"unknown tool {tool}",
                }
        except Exception as exc:  # noqa: BLE001 - protocol-level catch-all
            response = {"id": request.get("id", 0) if isinstance(request, dict) else 0,
                        "ok": False, "error": str(exc)}
        sys.stdout.write(json.dumps(response) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    serve()
