"""Live slave simulator behind a WebSocket endpoint.

One master connection at a time drives the slave with the same binary wire
format used everywhere else (binary WebSocket messages, one protocol frame
per message); `GET /status` reports the link state and transfer rates as
JSON.  A second concurrent connection is refused (single-operator rule).
"""

from __future__ import annotations

import asyncio
import time

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .phantom import PhantomConfig
from .session import SessionConfig, SlaveEndpoint


class _RateMeter:
    def __init__(self, window: float = 1.0):
        self.window = window
        self.samples: list[tuple[float, int]] = []

    def add(self, now: float, nbytes: int) -> None:
        self.samples.append((now, nbytes))
        cutoff = now - self.window
        while self.samples and self.samples[0][0] < cutoff:
            self.samples.pop(0)

    def rate(self, now: float) -> int:
        cutoff = now - self.window
        total = sum(n for t, n in self.samples if t >= cutoff)
        return int(total / self.window)


def create_app(phantom: PhantomConfig | None = None,
               cfg: SessionConfig | None = None) -> FastAPI:
    phantom = phantom or PhantomConfig()
    cfg = cfg or SessionConfig()
    app = FastAPI(title="tersim slave")
    state = {
        "slave": SlaveEndpoint(phantom, cfg),
        "connected": False,
        "rx": _RateMeter(),
        "tx": _RateMeter(),
        "t0": time.monotonic(),
    }
    app.state.sim = state

    def now_s() -> float:
        return time.monotonic() - state["t0"]

    @app.get("/status")
    def status():
        slave = state["slave"]
        now = now_s()
        return {
            "link": slave.state.link.phase.value,
            "halted": slave.state.halted,
            "connected": state["connected"],
            "rx_bytes_per_s": state["rx"].rate(now),
            "tx_bytes_per_s": state["tx"].rate(now),
            "probe_position": [float(v) for v in slave.state.actual_probe.position],
            "contact_force_n": [float(v) for v in slave.state.contact_force],
        }

    @app.websocket("/ws")
    async def ws(websocket: WebSocket):
        await websocket.accept()
        if state["connected"]:
            await websocket.close(code=1008, reason="single operator only")
            return
        state["connected"] = True
        state["slave"] = SlaveEndpoint(phantom, cfg)   # fresh session per master
        slave = state["slave"]
        inbox: asyncio.Queue[bytes] = asyncio.Queue()
        closed = asyncio.Event()

        async def reader():
            try:
                while True:
                    data = await websocket.receive_bytes()
                    state["rx"].add(now_s(), len(data))
                    inbox.put_nowait(data)
            except (WebSocketDisconnect, RuntimeError):
                closed.set()

        reader_task = asyncio.create_task(reader())
        try:
            while not closed.is_set():
                await asyncio.sleep(cfg.tick)
                payloads = []
                while not inbox.empty():
                    payloads.append(inbox.get_nowait())
                now = now_s()
                out = slave.tick(payloads, now)
                for frame in out:
                    await websocket.send_bytes(frame)
                    state["tx"].add(now, len(frame))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            reader_task.cancel()
            state["connected"] = False

    return app
