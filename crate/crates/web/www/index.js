import init, { Demo } from "./pkg/dgfn_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#ff7f0e"];
let demo = null;
let running = false;

function heat(canvas, probs, side) {
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / side;
  const max = Math.max(...probs) || 1;
  for (let i = 0; i < side; i++) {
    for (let j = 0; j < side; j++) {
      const v = Math.sqrt(probs[i * side + j] / max);
      const c = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${c},${c},255)`;
      ctx.fillRect(j * cell, i * cell, cell, cell);
    }
  }
}

function curve(canvas) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const total = demo.modes_total();
  const xs = [demo.trace(0, "trajectories"), demo.trace(1, "trajectories")];
  const xmax = Math.max(1, ...xs.map((x) => x[x.length - 1] || 0));
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
  for (let k = 0; k < 2; k++) {
    const ys = demo.trace(k, "modes");
    ctx.strokeStyle = COLORS[k];
    ctx.beginPath();
    ys.forEach((y, i) => {
      const px = (xs[k][i] / xmax) * (w - 10) + 5;
      const py = h - 5 - (total ? y / total : 0) * (h - 10);
      i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
    });
    ctx.stroke();
  }
}

function render() {
  const side = demo.side();
  const dview = document.querySelector("input[name=dview]:checked").value;
  heat($("map-gfn"), demo.heatmap("gfn"), side);
  heat($("map-dgfn"), demo.heatmap(dview), side);
  $("dgfn-caption").textContent = dview === "dgfn" ? "DGFN online" : "DGFN sampling network";
  curve($("curve"));
  const [l1g, l1d] = demo.oracle_l1();
  const last = (k, c) => demo.trace(k, c).at(-1) ?? 0;
  $("status").textContent =
    `step ${demo.steps()}   trajectories ${last(0, "trajectories")}\n` +
    `GFN   modes ${last(0, "modes")}/${demo.modes_total()}   L1 ${l1g.toFixed(4)}   loss ${last(0, "loss").toFixed(4)}\n` +
    `DGFN  modes ${last(1, "modes")}/${demo.modes_total()}   L1 ${l1d.toFixed(4)}   loss ${last(1, "loss").toFixed(4)}`;
}

function guard(f) {
  try {
    $("error").textContent = "";
    f();
  } catch (e) {
    running = false;
    $("run").textContent = "Run";
    $("error").textContent = String(e.message ?? e);
  }
}

function reset() {
  guard(() => {
    demo?.free();
    demo = new Demo(Number($("side").value), Number($("r0").value), Number($("seed").value));
    heat($("map-target"), demo.heatmap("target"), demo.side());
    render();
  });
}

function step() {
  guard(() => {
    demo.step(Number($("chunk").value));
    render();
  });
}

function loop() {
  if (!running) return;
  step();
  requestAnimationFrame(loop);
}

await init();
$("reset").onclick = reset;
$("step").onclick = step;
$("run").onclick = () => {
  running = !running;
  $("run").textContent = running ? "Pause" : "Run";
  loop();
};
document.querySelectorAll("input[name=dview]").forEach((r) => (r.onchange = () => guard(render)));
reset();
