"""Protocol test double for the sandbox runner.

Reads one request line from stdin and answers per case. A keyword in the
assertion text picks the behaviour; otherwise the source and the assertion
are executed for real in one shared namespace.
"""
import json
import os
import sys
import time


def emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def result(case_id, verdict, message="", started=None):
    ms = int((time.monotonic() - started) * 1000) if started is not None else 0
    emit({"id": case_id, "verdict": verdict, "message": message, "duration_ms": ms})


def main():
    req = json.loads(sys.stdin.readline())
    for case in req["cases"]:
        text = case["assertion_text"]
        cid = case["id"]
        started = time.monotonic()
        if "STUB_GARBAGE" in text:
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            return
        if "STUB_EARLY_DONE" in text:
            emit({"done": True})
            return
        if "STUB_UNKNOWN_ID" in text:
            result("no-such-case", "pass")
            continue
        if "STUB_HANG" in text:
            time.sleep(3600)
        if "STUB_DIE" in text:
            sys.stderr.write("stub runner crashing on purpose\n")
            os._exit(3)
        if "STUB_ENV" in text:
            leaked = "CODECOR_API_KEY" in os.environ
            result(cid, "fail" if leaked else "pass", "api key visible" if leaked else "", started)
            continue
        if "STUB_CWD" in text:
            here = os.getcwd()
            ok = os.path.basename(here).startswith("codecor-") and os.path.exists("codecor_runner.py")
            result(cid, "pass" if ok else "fail", here, started)
            continue
        ns = {"__name__": "__candidate__"}
        try:
            exec(compile(req["source"], "<candidate>", "exec"), ns)
            exec(compile(text, "<test>", "exec"), ns)
        except AssertionError as e:
            result(cid, "fail", "AssertionError" + (": " + str(e) if str(e) else ""), started)
        except BaseException as e:  # noqa: BLE001 - every failure is a verdict
            result(cid, "error", type(e).__name__ + ": " + str(e), started)
        else:
            result(cid, "pass", "", started)
    emit({"done": True})


main()
