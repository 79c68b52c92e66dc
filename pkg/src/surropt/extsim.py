"""Line-delimited JSON protocol for external simulators.

Request:  {"id": <int>, "psi": [..], "xs": [[..], ..]}
Reply:    {"id": <int>, "ys": [[..], ..]}

One reply per request, matching id, order preserved. Works over a child
process's stdio or a TCP socket. Any malformed reply, timeout, length
mismatch, or dead peer raises SimulatorFault; the episode layer treats that
as an aborted episode.

Run ``python3 -m surropt.extsim --kind three_hump --seed 7`` to serve the
built-in problems over stdio (plus a few degenerate kinds used by tests).
"""
import argparse
import json
import select
import socket
import subprocess
import sys
import time

import numpy as np

__all__ = ["SimulatorFault", "ExternalSimulator", "main"]


class SimulatorFault(RuntimeError):
    pass


class _PipeTransport:
    def __init__(self, cmd, timeout):
        self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE,
                                     stdout=subprocess.PIPE, bufsize=0)
        self.timeout = timeout
        self._buf = b""

    def send_line(self, line):
        try:
            self.proc.stdin.write(line.encode() + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise SimulatorFault(f"simulator process closed its input: {e}") from e

    def recv_line(self):
        deadline = time.monotonic() + self.timeout
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SimulatorFault(f"simulator reply timed out after {self.timeout}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise SimulatorFault(f"simulator reply timed out after {self.timeout}s")
            chunk = self.proc.stdout.read(65536)
            if not chunk:
                raise SimulatorFault("simulator process exited mid-batch")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode()

    def close(self):
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()


class _SocketTransport:
    def __init__(self, address, timeout):
        host, port = address.rsplit(":", 1)
        self.sock = socket.create_connection((host, int(port)), timeout=timeout)
        self.sock.settimeout(timeout)
        self._file = self.sock.makefile("rwb")

    def send_line(self, line):
        try:
            self._file.write(line.encode() + b"\n")
            self._file.flush()
        except OSError as e:
            raise SimulatorFault(f"simulator socket write failed: {e}") from e

    def recv_line(self):
        try:
            line = self._file.readline()
        except socket.timeout as e:
            raise SimulatorFault("simulator reply timed out") from e
        except OSError as e:
            raise SimulatorFault(f"simulator socket read failed: {e}") from e
        if not line:
            raise SimulatorFault("simulator closed the connection mid-batch")
        return line.decode()

    def close(self):
        self._file.close()
        self.sock.close()


class ExternalSimulator:
    """Client side of the protocol; one blocking round-trip per call."""

    def __init__(self, transport):
        self.transport = transport
        self.next_id = 0

    @classmethod
    def from_command(cls, cmd, timeout=300.0):
        return cls(_PipeTransport(cmd, timeout))

    @classmethod
    def from_address(cls, address, timeout=300.0):
        return cls(_SocketTransport(address, timeout))

    def call(self, psi, xs):
        req_id = self.next_id
        self.next_id += 1
        xs = np.asarray(xs, dtype=np.float64)
        req = json.dumps({"id": req_id, "psi": np.asarray(psi, dtype=np.float64).tolist(),
                          "xs": xs.tolist()})
        self.transport.send_line(req)
        raw = self.transport.recv_line()
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError as e:
            raise SimulatorFault(f"malformed simulator reply: {raw[:200]!r}") from e
        if not isinstance(reply, dict) or "id" not in reply or "ys" not in reply:
            raise SimulatorFault(f"simulator reply missing fields: {raw[:200]!r}")
        if reply["id"] != req_id:
            raise SimulatorFault(f"simulator reply id {reply['id']} != request id {req_id}")
        ys = np.asarray(reply["ys"], dtype=np.float64)
        if ys.ndim != 2 or len(ys) != len(xs):
            raise SimulatorFault(
                f"simulator returned {ys.shape} observations for {len(xs)} inputs")
        return ys

    def close(self):
        self.transport.close()


# ---- serving side ----

def _serve(kind, seed):
    from .problems import make_problem, simulate

    rng = np.random.default_rng(seed)
    prob = make_problem(kind, embedding_seed=seed) if kind in (
        "three_hump", "rosenbrock", "submanifold_hump") else None
    out = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        if kind == "die":
            return
        if kind == "sleep":
            time.sleep(30.0)
        if kind == "garbage":
            out.write("this is not a reply\n")
            out.flush()
            continue
        xs = np.asarray(req["xs"], dtype=np.float64)
        if kind == "echo":
            ys = xs[:, :1]
        elif kind == "badid":
            out.write(json.dumps({"id": req["id"] + 1000,
                                  "ys": xs[:, :1].tolist()}) + "\n")
            out.flush()
            continue
        elif kind == "short":
            out.write(json.dumps({"id": req["id"],
                                  "ys": xs[: max(len(xs) - 1, 0), :1].tolist()}) + "\n")
            out.flush()
            continue
        else:
            ys = simulate(prob, np.asarray(req["psi"], dtype=np.float64), xs, rng)
        out.write(json.dumps({"id": req["id"], "ys": ys.tolist()}) + "\n")
        out.flush()


def main(argv=None):
    ap = argparse.ArgumentParser(description="serve a simulator over stdio")
    ap.add_argument("--kind", required=True,
                    help="three_hump | rosenbrock | submanifold_hump | echo | "
                         "die | sleep | garbage | badid | short")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    _serve(args.kind, args.seed)


if __name__ == "__main__":
    main()
