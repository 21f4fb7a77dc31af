import init, { Demo } from "./pkg/beliefgraph_web.js";

const K = 3;
const COLORS = ["#1f77b4", "#d62728", "#2ca02c"];
const $ = (id) => document.getElementById(id);
let demo = null;

function slider(parent, label, min, max, step, value, onInput) {
  const wrap = document.createElement("label");
  const input = Object.assign(document.createElement("input"), { type: "range", min, max, step, value });
  const out = document.createElement("span");
  const show = () => (out.textContent = ` ${Number(input.value).toFixed(2)}`);
  input.addEventListener("input", () => { show(); onInput(); });
  show();
  wrap.append(`${label} `, input, out);
  parent.append(wrap);
  return input;
}

function bars(ctx, x0, y0, w, h, values, labels, color) {
  const bw = w / values.length;
  ctx.font = "11px system-ui";
  values.forEach((v, i) => {
    const bh = v * h;
    ctx.fillStyle = Array.isArray(color) ? color[i % color.length] : color;
    ctx.fillRect(x0 + i * bw + 3, y0 + h - bh, bw - 6, bh);
    ctx.fillStyle = "#333";
    ctx.fillText(labels[i], x0 + i * bw + 3, y0 + h + 13);
    ctx.fillText(v.toFixed(2), x0 + i * bw + 3, y0 + h - bh - 3);
  });
}

// --- 1. Gibbs -------------------------------------------------------------
const unary = [], pair = [];
function drawGibbs() {
  const res = JSON.parse(demo.gibbs(unary.map((s) => +s.value), pair.map((s) => +s.value)));
  const ctx = $("gibbs-canvas").getContext("2d");
  ctx.clearRect(0, 0, 520, 220);
  bars(ctx, 10, 20, 140, 170, res.marginals, ["m1", "m2", "m3"], COLORS);
  const labels = res.probs.map((_, c) => [0, 1, 2].map((i) => (c >> i) & 1).join(""));
  bars(ctx, 180, 20, 330, 170, res.probs, labels, "#888");
  ctx.fillStyle = "#333";
  ctx.fillText("marginals", 10, 12);
  ctx.fillText(`joint p(b), bits b1 b2 b3   log Z = ${res.log_partition.toFixed(3)}`, 180, 12);
}

// --- 2. Attention ---------------------------------------------------------
const marg = [];
function drawAttention() {
  const t = +$("att-step").value;
  const res = JSON.parse(demo.attention(marg.map((s) => +s.value), t));
  const ctx = $("att-canvas").getContext("2d");
  ctx.clearRect(0, 0, 560, 260);
  ctx.font = "11px system-ui";
  const cell = 28;
  res.attention.forEach((m, a) => {
    const x0 = 10 + a * (K * cell + 30), y0 = 30;
    m.forEach((row, i) => row.forEach((v, j) => {
      const shade = Math.round(255 * (1 - v));
      ctx.fillStyle = `rgb(${shade},${shade},255)`;
      ctx.fillRect(x0 + j * cell, y0 + i * cell, cell - 1, cell - 1);
    }));
    ctx.fillStyle = "#333";
    ctx.fillText(`action ${res.actions[a]}`, x0, y0 - 8);
    ctx.fillText(`p = ${res.probs[a].toFixed(3)}`, x0, y0 + K * cell + 14);
    const bh = res.probs[a] * 100;
    ctx.fillStyle = "#ff7f0e";
    ctx.fillRect(x0, y0 + K * cell + 120 - bh, K * cell - 1, bh);
  });
}

// --- 3. Rollout -----------------------------------------------------------
const obs = [];
function drawRollout() {
  const res = JSON.parse(demo.rollout(obs.map((s) => +s.value)));
  const ctx = $("roll-canvas").getContext("2d");
  ctx.clearRect(0, 0, 520, 240);
  ctx.font = "11px system-ui";
  const x = (t) => 50 + t * 200, y = (p) => 210 - p * 180;
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(40, 25, 440, 190);
  for (let i = 0; i < K; i++) {
    ctx.strokeStyle = COLORS[i];
    ctx.beginPath();
    res.marginals.forEach((m, t) => (t ? ctx.lineTo(x(t), y(m[i])) : ctx.moveTo(x(t), y(m[i]))));
    ctx.stroke();
    ctx.fillStyle = COLORS[i];
    ctx.fillText(`belief ${i + 1}`, 490 - 60 * (K - i) - 100, 15);
  }
  ctx.fillStyle = "#333";
  res.actions.forEach((a, t) => ctx.fillText(`t=${t} action ${a}`, x(t) - 20, 232));
}

function build() {
  $("error").textContent = "";
  try {
    demo = new Demo(+$("seed").value, +$("strength").value);
    drawGibbs();
    drawAttention();
    drawRollout();
  } catch (e) {
    $("error").textContent = String(e);
  }
}

function guarded(f) {
  return () => {
    try { f(); } catch (e) { $("error").textContent = String(e); }
  };
}

await init();
const g = $("gibbs-controls");
for (let i = 0; i < K; i++) unary.push(slider(g, `u${i + 1}`, -4, 4, 0.05, 0, guarded(drawGibbs)));
for (const [i, j] of [[1, 2], [1, 3], [2, 3]]) pair.push(slider(g, `ψ${i}${j}`, -4, 4, 0.05, 0, guarded(drawGibbs)));
const a = $("att-controls");
for (let i = 0; i < K; i++) marg.push(slider(a, `m${i + 1}`, 0, 1, 0.01, 0.5, guarded(drawAttention)));
$("att-step").addEventListener("change", guarded(drawAttention));
const r = $("roll-controls");
for (let t = 0; t < 3; t++) obs.push(slider(r, `observation at t=${t}`, 0, 3, 1, t, guarded(drawRollout)));
$("rebuild").addEventListener("click", build);
build();
