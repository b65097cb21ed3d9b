import init, { optimal_design, equal_efficiency_design, weight_path } from "./pkg/metalloc_wasm.js";

const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
const $ = (id) => document.getElementById(id);

function drawBars(design) {
  const c = $("bars"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const p = design.weights.length, slot = c.width / p, base = c.height - 30;
  const top = Math.max(...design.weights, 0.01);
  ctx.font = "13px sans-serif";
  ctx.textAlign = "center";
  design.weights.forEach((w, i) => {
    const h = (w / top) * (base - 30);
    ctx.fillStyle = COLORS[i % COLORS.length];
    ctx.fillRect(i * slot + slot * 0.2, base - h, slot * 0.6, h);
    ctx.fillStyle = "#222";
    ctx.fillText(`${w.toFixed(3)}  (${design.counts[i]})`, i * slot + slot / 2, base - h - 6);
    ctx.fillText(`sub-region ${i + 1}`, i * slot + slot / 2, base + 18);
  });
}

function drawPath(points) {
  const c = $("path"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const pad = 40, w = c.width - 2 * pad, h = c.height - 2 * pad;
  const s0 = points[0].sigma2, s1 = points[points.length - 1].sigma2;
  const top = Math.max(...points.flatMap((pt) => pt.weights)) * 1.1;
  const x = (s) => pad + ((s - s0) / (s1 - s0)) * w;
  const y = (v) => pad + h - (v / top) * h;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#222";
  ctx.font = "12px sans-serif";
  ctx.fillText(`σ² from ${s0} to ${s1}`, pad, c.height - 10);
  ctx.fillText(top.toFixed(2), 4, pad + 4);
  for (let i = 0; i < points[0].weights.length; i++) {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.lineWidth = 2;
    ctx.beginPath();
    points.forEach((pt, k) => (k ? ctx.lineTo : ctx.moveTo).call(ctx, x(pt.sigma2), y(pt.weights[i])));
    ctx.stroke();
  }
}

function fillTable(design) {
  const rows = design.weights.map((w, i) =>
    `<tr><td>${i + 1}</td><td>${w.toFixed(4)}</td><td>${design.counts[i]}</td><td>${design.variances[i].toExponential(4)}</td></tr>`);
  $("design").innerHTML =
    "<tr><th>sub-region</th><th>weight</th><th>locations</th><th>variance</th></tr>" + rows.join("") +
    `<tr><td colspan="4">criterion ${design.criterionValue.toExponential(6)}, certificate violation ${design.relativeViolation.toExponential(2)}</td></tr>`;
}

function update() {
  const structure = $("structure").value, criterion = $("criterion").value;
  const j = Number($("locations").value), s = Number($("sigma2").value);
  $("jOut").textContent = j;
  $("sOut").textContent = s;
  try {
    const design = JSON.parse(criterion === "equal"
      ? equal_efficiency_design(structure, j, s)
      : optimal_design(structure, criterion, j, s));
    drawBars(design);
    fillTable(design);
    const pathCrit = criterion === "equal" ? "a" : criterion;
    drawPath(JSON.parse(weight_path(structure, pathCrit, j, 10, 490, 25)));
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

await init();
for (const id of ["structure", "criterion", "locations", "sigma2"]) $(id).addEventListener("input", update);
update();
