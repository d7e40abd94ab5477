"""Helpers for starting local replica clusters on free ports."""

import socket


def free_ports(count: int) -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def deployment(n: int = 6, f: int = 1, **extra) -> dict:
    peers = [f"127.0.0.1:{p}" for p in free_ports(n)]
    return {"peers": peers, "f": f, "scheme": "keyed-tag", **extra}


class LocalCluster:
    """Replica subprocesses started through the CLI; status lines are collected per replica."""

    def __init__(self, dep: dict, workdir):
        import json
        import os
        import subprocess
        import sys
        import threading

        self.dep = dep
        self.path = os.path.join(str(workdir), "deployment.json")
        with open(self.path, "w") as fh:
            json.dump(dep, fh)
        self.procs = {}
        self.status = {i: [] for i in range(len(dep["peers"]))}
        for i in range(len(dep["peers"])):
            p = subprocess.Popen([sys.executable, "-m", "ringbft", "run-replica", "--config", self.path,
                                  "--id", str(i)], stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
            self.procs[i] = p
            threading.Thread(target=self._read, args=(i, p), daemon=True).start()

    def _read(self, i, proc):
        import json
        import time

        for line in proc.stdout:
            try:
                rec = json.loads(line)
            except ValueError:
                continue
            rec["wall"] = time.monotonic()
            self.status[i].append(rec)

    def kill(self, i: int) -> None:
        self.procs[i].kill()
        self.procs[i].wait()

    def close(self) -> None:
        for p in self.procs.values():
            if p.poll() is None:
                p.terminate()
        for p in self.procs.values():
            try:
                p.wait(timeout=5)
            except Exception:
                p.kill()

    def latest(self, i: int) -> dict:
        return self.status[i][-1] if self.status[i] else {}
