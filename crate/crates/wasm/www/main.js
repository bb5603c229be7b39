import init, { simulate_column, learn_scalar, beta_curve } from "./pkg/dissipakit_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// Draws each series as a polyline; `log` plots log10 of positive x values.
function plot(canvas, series, { logX = false } = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const pts = series.flatMap((s) => s.points).filter(([x, y]) => Number.isFinite(x) && Number.isFinite(y));
  if (pts.length === 0) return;
  const tx = (x) => (logX ? Math.log10(x) : x);
  const xs = pts.map(([x]) => tx(x));
  const ys = pts.map(([, y]) => y);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const pad = 30;
  const sx = (x) => pad + ((tx(x) - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.moveTo(pad, sy(Math.min(Math.max(0, y0), y1)));
  ctx.lineTo(w - pad, sy(Math.min(Math.max(0, y0), y1)));
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(y1.toPrecision(3), 2, pad);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    let pen = false;
    for (const [x, y] of s.points) {
      if (!Number.isFinite(y)) { pen = false; continue; }
      if (pen) ctx.lineTo(sx(x), sy(y)); else ctx.moveTo(sx(x), sy(y));
      pen = true;
    }
    ctx.stroke();
  }
}

function guard(out, f) {
  try {
    out.classList.remove("err");
    f();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e.message ?? e);
  }
}

let certificate = null;

function runSimulation() {
  guard($("sim-msg"), () => {
    const r = JSON.parse(simulate_column(num("sim-sigma"), num("sim-hold"), num("sim-horizon"), BigInt(num("sim-seed"))));
    plot($("sim-plot"), [
      { color: "#c60", points: r.u.map((v, t) => [t, v]) },
      { color: "#06c", points: r.y.map((v, t) => [t, v]) },
    ]);
    $("sim-msg").textContent = `orange: reflux deviation u, blue: distillate composition deviation y (${r.y.length} steps)`;
  });
}

function runLearn() {
  guard($("lin-out"), () => {
    const r = JSON.parse(learn_scalar(num("lin-a"), num("lin-b"), num("lin-lambda"), num("lin-sigma"), BigInt(num("lin-seed"))));
    certificate = r.certificate;
    const c = r.certificate;
    const lines = [
      `Q = ${JSON.stringify(c.Q)}   P = ${JSON.stringify(c.P)}`,
      `rho = ${c.rho.toExponential(4)}   alpha = ${c.alpha.toPrecision(5)}   objective = ${r.objective.toPrecision(6)}`,
      r.gain ? `L2 gain ≤ ${r.gain.gain.toPrecision(5)} (alpha* = ${r.gain.alpha_star.toPrecision(4)}, beta* = ${r.gain.beta_star.toPrecision(5)})` : "no gain certificate",
      `held-out normalized margins: mean ${r.verify.mean.toExponential(3)}, std ${r.verify.std.toExponential(3)}, violations ${(100 * r.verify.violation_rate).toFixed(1)}%`,
    ];
    $("lin-out").textContent = lines.join("\n");
    plot($("lin-plot"), [{ color: "#393", points: r.verify.margins.map((m, i) => [i, m]) }]);
    $("gain-run").disabled = false;
    runGain();
  });
}

function runGain() {
  if (!certificate) return;
  guard($("gain-msg"), () => {
    const r = JSON.parse(beta_curve(JSON.stringify(certificate), num("gain-lo"), num("gain-hi"), 200));
    plot($("gain-plot"), [{ color: "#a0a", points: r.map((p) => [p.alpha, p.beta ?? NaN]) }], { logX: true });
    const ok = r.filter((p) => p.beta !== null);
    $("gain-msg").textContent = ok.length
      ? `β(α) defined on ${ok.length} of ${r.length} points; log-scaled α axis`
      : "β(α) undefined on this range";
  });
}

await init();
$("sim-run").onclick = runSimulation;
$("lin-run").onclick = runLearn;
$("gain-run").onclick = runGain;
runSimulation();
