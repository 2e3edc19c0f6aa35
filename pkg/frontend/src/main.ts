/**
 * Browser entry point: wires the state store to a WebSocket and the DOM.
 *
 * Panels: live image canvas with caliper overlay, force bar with the
 * 6.4 N cap marker, link badge, transfer rates.  The slave endpoint URL
 * comes from the `?url=` query parameter and defaults to the local
 * simulator.
 */

import { ConsoleState, FORCE_CAP_N } from "./state";

const params = new URLSearchParams(location.search);
const wsUrl = params.get("url") ?? "ws://127.0.0.1:8765/ws";

const state = new ConsoleState();
let ws: WebSocket | null = null;

const canvas = document.getElementById("frame") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const forceFill = document.getElementById("force-fill")!;
const forceText = document.getElementById("force-text")!;
const badge = document.getElementById("link-badge")!;
const rates = document.getElementById("rates")!;
const noteEl = document.getElementById("note")!;
const readoutEl = document.getElementById("readout")!;

const BADGE_COLORS: Record<string, string> = {
    Idle: "#888", HelloSent: "#888", Active: "#2a8f2a",
    Degraded: "#c8a400", SafeStop: "#c03030", Closed: "#555",
};

function now(): number {
    return performance.now() / 1000;
}

function connect(): void {
    ws = new WebSocket(wsUrl);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => ws!.send(state.hello(now()));
    ws.onmessage = (ev) => {
        state.handleDatagram(new Uint8Array(ev.data as ArrayBuffer), now());
    };
    ws.onclose = () => {
        state.note = "socket closed, retrying";
        setTimeout(connect, 1000);
    };
}

function sendMaybe(data: Uint8Array | null): void {
    if (data && ws && ws.readyState === WebSocket.OPEN) ws.send(data);
}

// steering: drag = XY, shift-drag = tilt, wheel = depth
let dragging = false;
let lastX = 0;
let lastY = 0;
canvas.addEventListener("mousedown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
});
window.addEventListener("mouseup", () => { dragging = false; });
window.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    if (ev.shiftKey) state.tiltDrag(dx, dy);
    else state.drag(dx, dy);
});
canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    state.wheel(Math.sign(ev.deltaY));
}, { passive: false });

canvas.addEventListener("click", (ev) => {
    const r = canvas.getBoundingClientRect();
    const f = state.latestFrame;
    if (!f) return;
    const x = Math.floor((ev.clientX - r.left) * (f.width / r.width));
    const y = Math.floor((ev.clientY - r.top) * (f.height / r.height));
    const mm = state.caliperClick(x, y);
    if (mm !== null) readoutEl.textContent = `${mm.toFixed(1)} mm`;
});

window.addEventListener("keydown", (ev) => {
    if (ev.key === "f") sendMaybe(state.freeze(now()));
    if (ev.key === "u") {
        sendMaybe(state.unfreeze(now()));
        readoutEl.textContent = "";
    }
});

function drawFrame(): void {
    const f = state.latestFrame;
    if (!f) {
        ctx.fillStyle = "#111";
        ctx.fillRect(0, 0, canvas.width, canvas.height);
        ctx.fillStyle = "#666";
        ctx.fillText("waiting for image stream", 60, canvas.height / 2);
        return;
    }
    if (canvas.width !== f.width || canvas.height !== f.height) {
        canvas.width = f.width;
        canvas.height = f.height;
    }
    const img = ctx.createImageData(f.width, f.height);
    for (let i = 0; i < f.pixels.length; i++) {
        const v = f.pixels[i];
        img.data[4 * i] = v;
        img.data[4 * i + 1] = v;
        img.data[4 * i + 2] = v;
        img.data[4 * i + 3] = 255;
    }
    ctx.putImageData(img, 0, 0);
    ctx.strokeStyle = "#ffd400";
    ctx.fillStyle = "#ffd400";
    for (const p of state.caliper) {
        ctx.beginPath();
        ctx.arc(p.x, p.y, 3, 0, 2 * Math.PI);
        ctx.fill();
    }
    if (state.caliper.length === 2) {
        const [a, b] = state.caliper;
        ctx.beginPath();
        ctx.moveTo(a.x, a.y);
        ctx.lineTo(b.x, b.y);
        ctx.stroke();
    }
    if (f.frozen) {
        ctx.strokeStyle = "#4aa3ff";
        ctx.lineWidth = 2;
        ctx.strokeRect(1, 1, f.width - 2, f.height - 2);
    }
}

function loop(): void {
    const t = now();
    state.tick(t);
    sendMaybe(state.emitPose(t));
    drawFrame();
    forceFill.style.width = `${(state.forceBarFraction() * 100).toFixed(1)}%`;
    forceText.textContent =
        `${state.displayForceN().toFixed(2)} / ${FORCE_CAP_N.toFixed(1)} N`;
    badge.textContent = state.link;
    badge.style.background = BADGE_COLORS[state.link];
    rates.textContent =
        `rx ${(state.rxBytesPerS / 1024).toFixed(0)} KiB/s  ` +
        `tx ${(state.txBytesPerS / 1024).toFixed(0)} KiB/s`;
    noteEl.textContent = state.note ?? "";
    requestAnimationFrame(loop);
}

connect();
requestAnimationFrame(loop);
