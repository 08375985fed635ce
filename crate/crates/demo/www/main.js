import init, { closed_loop, regret_curve, steady_input } from "./pkg/ddoco_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

function plot(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.x), ys = series.flatMap((s) => s.y).filter(Number.isFinite);
  if (!xs.length || !ys.length) return;
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  let y0 = Math.min(...ys), y1 = Math.max(...ys);
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad / 2 - ((y - y0) / (y1 - y0)) * (h - pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad / 2, w - 2 * pad, h - pad);
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  ctx.fillText(y1.toPrecision(3), 2, pad / 2 + 10);
  ctx.fillText(y0.toPrecision(3), 2, h - pad / 2);
  ctx.fillText(String(x0), pad, h - 4);
  ctx.fillText(String(x1), w - pad - 20, h - 4);
  for (const x of opts.marks || []) {
    ctx.strokeStyle = "#ddd";
    ctx.beginPath(); ctx.moveTo(px(x), pad / 2); ctx.lineTo(px(x), h - pad / 2); ctx.stroke();
  }
  series.forEach((s, i) => {
    ctx.strokeStyle = s.color || COLORS[i % COLORS.length];
    ctx.setLineDash(s.dash || []);
    ctx.beginPath();
    s.x.forEach((x, k) => (k ? ctx.lineTo(px(x), py(s.y[k])) : ctx.moveTo(px(x), py(s.y[k]))));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillText(s.label, w - pad - 120, pad / 2 + 14 * (i + 1));
  });
}

function guarded(out, fn) {
  return () => {
    out.classList.remove("error");
    try { fn(); } catch (e) { out.textContent = String(e.message || e); out.classList.add("error"); }
  };
}

$("cl-run").onclick = guarded($("cl-summary"), () => {
  const r = JSON.parse(closed_loop(num("cl-seed"), num("cl-horizon"), num("cl-noise"), num("cl-interval"), num("cl-step")));
  plot($("cl-output"), [
    { label: "y", x: r.t, y: r.y.map((v) => v[0]) },
    { label: "theta", x: r.t, y: r.theta.map((v) => v[0]), dash: [4, 3] },
    { label: "predicted y", x: r.t, y: r.y_hat.map((v) => v[0]), dash: [1, 3] },
  ], { marks: r.switches });
  plot($("cl-regret"), [{ label: "cumulative regret", x: r.t, y: r.cumulative_regret }], { marks: r.switches });
  $("cl-summary").textContent = JSON.stringify(r.summary, null, 2);
});

$("rc-run").onclick = guarded($("rc-table"), () => {
  const horizons = new Uint32Array($("rc-horizons").value.split(",").map((s) => Number(s.trim())));
  const pts = JSON.parse(regret_curve(num("rc-seed"), num("rc-noise"), num("rc-interval"), horizons));
  plot($("rc-plot"), [{ label: "total regret", x: pts.map((p) => p.horizon), y: pts.map((p) => p.total_regret) }]);
  $("rc-table").textContent = pts
    .map((p) => `T=${p.horizon}\tregret=${p.total_regret.toExponential(4)}\tvar(theta)=${p.theta_variation.toFixed(3)}\tvar(eta)=${p.eta_variation.toFixed(3)}`)
    .join("\n");
});

$("ss-run").onclick = guarded($("ss-out"), () => {
  const r = JSON.parse(steady_input(num("ss-seed"), num("ss-v0"), num("ss-v1"), num("ss-y")));
  $("ss-out").textContent = JSON.stringify(r, null, 2);
});

init().then(() => { $("status").textContent = "ready"; }, (e) => { $("status").textContent = `failed to load: ${e}`; });
