"""Parent side of the component sandbox.

The candidate code runs in a separate ``python -I`` process started in an
empty temporary directory, with CPU, address-space and file-size limits, an
audit hook that denies network, process and out-of-tree file access, and a
per-component wall-clock alarm. The parent also enforces its own deadline
and kills the child if the alarm is defeated.
"""

from __future__ import annotations

import json
import os
import queue
import signal
import struct
import subprocess
import sys
import sysconfig
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import SandboxUnavailable

CHILD = Path(__file__).with_name("_sandbox_child.py")


@dataclass(frozen=True)
class SandboxLimits:
    timeout: float = 10.0
    memory_mb: int = 1024
    startup_grace: float = 20.0


def encode_frame(obj) -> bytes:
    data = json.dumps(obj).encode("utf-8")
    return struct.pack(">I", len(data)) + data


def read_frame(fh):
    head = fh.read(4)
    if len(head) < 4:
        return None
    (n,) = struct.unpack(">I", head)
    body = fh.read(n)
    if len(body) < n:
        return None
    return json.loads(body.decode("utf-8"))


def allowed_read_paths() -> list[str]:
    import numpy

    paths = {sysconfig.get_path(k) for k in ("stdlib", "platstdlib", "purelib", "platlib")}
    paths.add(os.path.dirname(os.path.dirname(numpy.__file__)))
    paths.add(os.devnull)
    return sorted(p for p in paths if p)


def _reader(stream, q: queue.Queue):
    try:
        while True:
            frame = read_frame(stream)
            q.put(frame)
            if frame is None or frame.get("done"):
                return
    except Exception as exc:  # corrupt stream
        q.put({"protocol_error": str(exc)})


def run_components(components: list[dict], probes: list[dict], actions: list, limits: SandboxLimits | None = None) -> dict[str, dict]:
    """Execute components in one child process; return a result frame per role.

    Result ``status`` is one of ok, load_error, exec_error, bad_output,
    timeout, crashed, skipped.
    """
    limits = limits or SandboxLimits()
    request = {
        "limits": {
            "timeout": limits.timeout,
            "memory_mb": limits.memory_mb,
            "cpu_seconds": 3 * len(components) * limits.timeout + 10,
        },
        "allowed_read": allowed_read_paths(),
        "components": components,
        "probes": probes,
        "actions": actions,
    }
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "OPENBLAS_NUM_THREADS": "1",
        "OMP_NUM_THREADS": "1",
        "MKL_NUM_THREADS": "1",
    }
    workdir = tempfile.mkdtemp(prefix="autorl-sandbox-")
    try:
        try:
            proc = subprocess.Popen(
                [sys.executable, "-I", "-B", str(CHILD)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                env=env,
                start_new_session=True,
            )
        except OSError as exc:
            raise SandboxUnavailable(f"cannot start sandbox process: {exc}") from exc
        return _converse(proc, request, components, limits)
    finally:
        for p in Path(workdir).glob("*"):
            try:
                p.unlink()
            except OSError:
                pass
        try:
            os.rmdir(workdir)
        except OSError:
            pass


def _converse(proc, request, components, limits):
    frames: queue.Queue = queue.Queue()
    stderr_chunks: list[bytes] = []
    t_out = threading.Thread(target=_reader, args=(proc.stdout, frames), daemon=True)
    t_err = threading.Thread(target=lambda: stderr_chunks.append(proc.stderr.read()), daemon=True)
    t_out.start()
    t_err.start()
    killed = False

    def kill():
        nonlocal killed
        killed = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()

    try:
        proc.stdin.write(encode_frame(request))
        proc.stdin.close()
    except BrokenPipeError:
        pass

    try:
        ready = frames.get(timeout=limits.startup_grace)
    except queue.Empty:
        ready = None
    if not ready or not ready.get("ready"):
        kill()
        proc.wait()
        t_err.join(1)
        err = b"".join(stderr_chunks).decode("utf-8", "replace")[-2000:]
        raise SandboxUnavailable(f"sandbox process failed to start: {err or 'no output'}")

    results: dict[str, dict] = {}
    pending = [c["role"] for c in components]
    deadline = 3 * limits.timeout + 1.0
    while pending:
        try:
            frame = frames.get(timeout=deadline)
        except queue.Empty:
            kill()
            results[pending.pop(0)] = {"status": "timeout", "error": "sandbox killed after the wall-clock deadline"}
            break
        if frame is None or "protocol_error" in frame or frame.get("done"):
            # stream ended early: blame the component that was running
            try:
                rc = proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                kill()
                rc = proc.wait()
            if rc in (-signal.SIGXCPU, -signal.SIGKILL):
                results[pending.pop(0)] = {"status": "timeout", "error": "CPU time limit exceeded"}
            else:
                results[pending.pop(0)] = {"status": "crashed", "error": f"sandbox process died with exit code {rc}"}
            break
        role = frame.get("role")
        if role in pending:
            pending.remove(role)
            results[role] = frame
    for role in pending:
        results[role] = {"status": "skipped", "error": "not run"}

    try:
        proc.wait(timeout=5)
    except subprocess.TimeoutExpired:
        kill()
        proc.wait()
    return results
