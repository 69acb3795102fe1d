"""Minimal check harness: ``python -m orchestra.sandbox SOLUTION TESTS``.

Executes the solution file, then the test file in the same namespace, with
sockets disabled. Exit status 0 means every assertion held. Resource limits
and the temporary working directory are applied by the caller.
"""

from __future__ import annotations

import runpy
import socket
import sys


def _no_network(*_args, **_kwargs):
    raise OSError("network access is disabled in the check harness")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: python -m orchestra.sandbox SOLUTION TESTS", file=sys.stderr)
        return 2
    socket.socket = _no_network  # type: ignore[assignment,misc]
    socket.create_connection = _no_network  # type: ignore[assignment]
    solution, tests = argv
    try:
        namespace = runpy.run_path(solution, run_name="solution")
        runpy.run_path(tests, init_globals=namespace, run_name="__main__")
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) or exc.code is None else 1
    except BaseException as exc:  # noqa: BLE001 - any failure is a failed check
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
