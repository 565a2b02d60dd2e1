"""Sandbox child process.

Protocol: frames on stdin/stdout, each a 4-byte big-endian length followed by
UTF-8 JSON. The parent sends one request frame; the child answers with a
``ready`` frame, one frame per component, then a ``done`` frame.

This file runs under ``python -I`` and must only import the stdlib and numpy.
"""

import json
import math
import os
import signal
import struct
import sys
import traceback


def read_frame(fh):
    head = fh.read(4)
    if len(head) < 4:
        return None
    (n,) = struct.unpack(">I", head)
    return json.loads(fh.read(n).decode("utf-8"))


class Channel:
    def __init__(self, fd):
        self.fd = fd

    def send(self, obj):
        data = json.dumps(obj).encode("utf-8")
        buf = struct.pack(">I", len(data)) + data
        while buf:
            n = os.write(self.fd, buf)
            buf = buf[n:]


class SandboxTimeout(BaseException):
    pass


def _on_alarm(signum, frame):
    raise SandboxTimeout()


def apply_limits(limits):
    try:
        import resource
    except ImportError:
        return
    mb = 1024 * 1024
    cpu = int(math.ceil(limits.get("cpu_seconds", 60)))
    for res, value in (
        (resource.RLIMIT_CPU, cpu),
        (resource.RLIMIT_AS, int(limits.get("memory_mb", 1024)) * mb),
        (resource.RLIMIT_FSIZE, 0),
    ):
        try:
            resource.setrlimit(res, (value, value))
        except (ValueError, OSError):
            pass


_BLOCKED_EVENTS = (
    "socket.",
    "subprocess.Popen",
    "os.system",
    "os.exec",
    "os.posix_spawn",
    "os.spawn",
    "os.fork",
    "os.forkpty",
    "os.kill",
    "os.killpg",
    "os.putenv",
    "os.unsetenv",
    "os.remove",
    "os.rename",
    "os.rmdir",
    "os.mkdir",
    "os.symlink",
    "os.link",
    "os.truncate",
    "os.chmod",
    "os.chown",
    "os.chdir",
    "os.utime",
    "shutil.",
    "ctypes.",
    "pty.",
    "webbrowser.",
    "urllib.Request",
    "ftplib.",
    "smtplib.",
    "http.client.",
)
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC


def install_guard(allowed_read):
    allowed = tuple(os.path.realpath(p) for p in allowed_read)

    def readable(path):
        if isinstance(path, int):
            return True
        if isinstance(path, bytes):
            path = os.fsdecode(path)
        real = os.path.realpath(str(path))
        return any(real == p or real.startswith(p.rstrip(os.sep) + os.sep) for p in allowed)

    def hook(event, args):
        if event == "open":
            path, mode, flags = args
            writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or (
                isinstance(flags, int) and flags & _WRITE_FLAGS
            )
            if writing and not isinstance(path, int):
                raise PermissionError(f"sandbox: write access to {path!r} denied")
            if not readable(path):
                raise PermissionError(f"sandbox: read access to {path!r} denied")
        elif event in ("os.listdir", "os.scandir", "glob.glob"):
            target = args[0] if args else "."
            if not readable(target if target is not None else "."):
                raise PermissionError(f"sandbox: listing {target!r} denied")
        elif event.startswith(_BLOCKED_EVENTS):
            raise PermissionError(f"sandbox: {event} denied")

    sys.addaudithook(hook)


def _to_array(x):
    import numpy as np

    if isinstance(x, dict):
        return {k: _to_array(v) for k, v in x.items()}
    if isinstance(x, list):
        return np.asarray(x, dtype=float)
    return x


def _jsonable(x):
    import numpy as np

    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (bool, np.bool_)):
        return float(x)
    if isinstance(x, (int, float)):
        return x
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, (np.ndarray, list, tuple)):
        arr = np.asarray(x)
        if arr.dtype == object or not (np.issubdtype(arr.dtype, np.number) or arr.dtype == np.bool_):
            raise TypeError(f"non-numeric output of dtype {arr.dtype}")
        return arr.astype(float).tolist()
    raise TypeError(f"unsupported output type {type(x).__name__}")


def _excerpt(obj, limit=400):
    text = json.dumps(obj)
    return text if len(text) <= limit else text[:limit] + "..."


def run_component(comp, calls, timeout):
    """Load the source and run it over ``calls`` twice; return a result frame."""
    import numpy as np
    from typing import Any, Dict, List, Optional, Tuple

    role = comp["role"]
    ns = {"np": np, "numpy": np, "math": math, "Dict": Dict, "List": List, "Any": Any,
          "Optional": Optional, "Tuple": Tuple, "__name__": "candidate"}
    try:
        signal.setitimer(signal.ITIMER_REAL, timeout)
        try:
            exec(compile(comp["source"], f"<{role}>", "exec"), ns)
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0)
        fn = ns.get(comp["entry"])
        if not callable(fn):
            raise NameError(f"{comp['entry']} is not defined")
    except SandboxTimeout:
        return {"role": role, "status": "timeout", "error": "loading exceeded the time limit"}
    except BaseException as exc:  # noqa: BLE001 - any failure is a load failure
        return {"role": role, "status": "load_error", "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(limit=-3)}

    passes = []
    for _ in range(2):
        outputs = []
        index = -1
        signal.setitimer(signal.ITIMER_REAL, timeout)
        try:
            for index, (args, raw) in enumerate(calls):
                out = fn(*args)
                try:
                    outputs.append(_jsonable(out))
                except TypeError as exc:
                    return {"role": role, "status": "bad_output", "error": str(exc), "index": index,
                            "input": _excerpt(raw)}
        except SandboxTimeout:
            return {"role": role, "status": "timeout", "error": f"exceeded the {timeout:g}s time limit",
                    "index": index, "input": _excerpt(calls[index][1]) if index >= 0 else None}
        except BaseException as exc:  # noqa: BLE001
            return {"role": role, "status": "exec_error", "error": f"{type(exc).__name__}: {exc}",
                    "traceback": traceback.format_exc(limit=-3), "index": index,
                    "input": _excerpt(calls[index][1])}
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0)
        passes.append(outputs)
    return {"role": role, "status": "ok", "outputs": passes[0], "outputs2": passes[1]}


def main():
    stdin = sys.stdin.buffer
    proto = Channel(os.dup(1))
    devnull = os.open(os.devnull, os.O_WRONLY)
    os.dup2(devnull, 1)
    sys.stdout = open(os.devnull, "w")

    req = read_frame(stdin)
    if req is None:
        return 2
    import numpy  # noqa: F401 - import before limits and guard
    from typing import Any, Dict, List, Optional, Tuple  # noqa: F401

    apply_limits(req.get("limits", {}))
    signal.signal(signal.SIGALRM, _on_alarm)
    install_guard(req.get("allowed_read", []))
    proto.send({"ready": True})

    timeout = float(req.get("limits", {}).get("timeout", 10.0))
    probes = req["probes"]
    actions = [_to_array(a) for a in req["actions"]]
    obs_out = None
    for comp in req["components"]:
        role = comp["role"]
        if role == "obs":
            raw = [p["state"] for p in probes] + [p["next_state"] for p in probes]
            calls = [((_to_array(s),), s) for s in raw]
        elif role == "act":
            calls = [((a,), r) for a, r in zip(actions, req["actions"])]
        else:
            if obs_out is None:
                proto.send({"role": role, "status": "skipped", "error": "observation outputs unavailable"})
                continue
            n = len(probes)
            calls = []
            for i, p in enumerate(probes):
                args = (_to_array(obs_out[i]), actions[i], _to_array(obs_out[n + i]), dict(p.get("info") or {}))
                calls.append((args, {"state": p["state"], "action": req["actions"][i],
                                     "next_state": p["next_state"], "info": p.get("info")}))
        result = run_component(comp, calls, timeout)
        if role == "obs" and result["status"] == "ok":
            obs_out = result["outputs"]
        proto.send(result)
    proto.send({"done": True})
    return 0


if __name__ == "__main__":
    sys.exit(main())
