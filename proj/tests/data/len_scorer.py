#!/usr/bin/env python3
"""Line-protocol scorer stub for tests.

Reads {"id", "reference", "candidate", "lang"} lines and answers
{"id", "score"} with a length-ratio score. Candidate text controls behavior:
  NOSCORE  -> {"id", "error": ...}
  BADSCORE -> score 250 (outside any 0-100 scale)
  SKIPME   -> no reply line at all
"""
import json
import sys


def main() -> None:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        candidate = request["candidate"]
        if "SKIPME" in candidate:
            continue
        if "NOSCORE" in candidate:
            reply = {"id": request["id"], "error": "cannot score"}
        elif "BADSCORE" in candidate:
            reply = {"id": request["id"], "score": 250.0}
        else:
            a = len(candidate)
            b = len(request["reference"])
            reply = {
                "id": request["id"],
                "score": 100.0 * min(a, b) / max(1, max(a, b)),
            }
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
