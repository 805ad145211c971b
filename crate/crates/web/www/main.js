import init, { crowded_scene, compare_suppression, anchor_layout } from "./pkg/detkit_web.js";

const $ = (id) => document.getElementById(id);
const LEVEL_COLORS = ["#d73027", "#fc8d59", "#91bfdb", "#4575b4", "#313695"];

function call(fn, ...args) {
  try {
    $("error").textContent = "";
    return JSON.parse(fn(...args));
  } catch (e) {
    $("error").textContent = String(e);
    return null;
  }
}

function drawBoxes(canvas, objects, detections) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.lineWidth = 2;
  ctx.strokeStyle = "#1a9850";
  for (const o of objects) {
    const [x1, y1, x2, y2] = o.bbox;
    ctx.strokeRect(x1, y1, x2 - x1, y2 - y1);
  }
  ctx.lineWidth = 1.5;
  for (const d of detections) {
    const [x1, y1, x2, y2] = d.bbox;
    ctx.strokeStyle = `rgba(215, 48, 39, ${Math.max(0.08, d.score)})`;
    ctx.strokeRect(x1, y1, x2 - x1, y2 - y1);
  }
}

const pct = (v) => (v === null ? "-" : (100 * v).toFixed(1));

function updateScene() {
  const seed = Number($("seed").value) >>> 0;
  const crowding = Number($("crowding").value);
  const sigma = Number($("sigma").value);
  const nt = Number($("nt").value);
  $("crowding-v").textContent = crowding.toFixed(2);
  $("sigma-v").textContent = sigma.toFixed(1);
  $("nt-v").textContent = nt.toFixed(2);

  const scene = call(crowded_scene, seed, crowding, sigma);
  const cmp = call(compare_suppression, seed, crowding, sigma, nt);
  if (!scene || !cmp) return;
  drawBoxes($("raw"), scene.objects, scene.detections);
  $("raw-info").textContent = `${scene.objects.length} objects, ${scene.detections.length} detections`;
  for (const mode of ["hard", "soft"]) {
    drawBoxes($(mode), scene.objects, cmp[mode].kept);
    $(`${mode}-info`).textContent =
      `${cmp[mode].kept.length} kept, AP ${pct(cmp[mode].ap)}, AP50 ${pct(cmp[mode].ap50)}`;
  }
}

function updateAnchors() {
  const w = Number($("aw").value);
  const h = Number($("ah").value);
  const levels = call(anchor_layout, w, h, $("variant").value);
  if (!levels) return;

  const canvas = $("anchors");
  const ctx = canvas.getContext("2d");
  const scale = Math.min(canvas.width / w, canvas.height / h);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(0, 0, w * scale, h * scale);
  levels.forEach((lvl, i) => {
    ctx.strokeStyle = LEVEL_COLORS[i % LEVEL_COLORS.length];
    for (const [x1, y1, x2, y2] of lvl.center_cell) {
      ctx.strokeRect(x1 * scale, y1 * scale, (x2 - x1) * scale, (y2 - y1) * scale);
    }
  });

  const rows = levels
    .map((l, i) =>
      `<tr><td style="color:${LEVEL_COLORS[i % LEVEL_COLORS.length]}">${l.name}</td><td>${l.stride}</td>` +
      `<td>${l.size}</td><td>${l.grid_height}&times;${l.grid_width}</td><td>${l.count}</td></tr>`)
    .join("");
  const total = levels.reduce((s, l) => s + l.count, 0);
  $("anchor-table").innerHTML =
    "<tr><th>level</th><th>stride</th><th>size</th><th>grid</th><th>anchors</th></tr>" +
    rows + `<tr><th colspan="4">total</th><td>${total}</td></tr>`;
}

await init();
for (const id of ["seed", "crowding", "sigma", "nt"]) $(id).addEventListener("input", updateScene);
for (const id of ["variant", "aw", "ah"]) $(id).addEventListener("input", updateAnchors);
updateScene();
updateAnchors();
