import init, { project_scene, route_group, box_iou } from "./pkg/grca_wasm.js";

const $ = (id) => document.getElementById(id);
const call = (fn, input) => JSON.parse(fn(JSON.stringify(input)));
const num = (id) => parseFloat($(id).value);
const numbers = (s) => s.split(",").map((v) => parseFloat(v));

function showValues(root) {
  for (const input of root.querySelectorAll("input[type=range]")) {
    input.nextElementSibling.textContent = input.value;
  }
}

// Corners are ordered with x varying fastest, so edges join indices that
// differ in exactly one bit.
const EDGES = [];
for (let i = 0; i < 8; i++) {
  for (const bit of [1, 2, 4]) {
    if (!(i & bit)) EDGES.push([i, i | bit]);
  }
}

function drawProjection(out, pred) {
  const ctx = $("proj-canvas").getContext("2d");
  ctx.clearRect(0, 0, 512, 512);
  if (out.corners) {
    ctx.strokeStyle = "#16a34a";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    for (const [a, b] of EDGES) {
      ctx.moveTo(...out.corners[a]);
      ctx.lineTo(...out.corners[b]);
    }
    ctx.stroke();
  }
  if (out.footprint) {
    const [x0, y0, x1, y1] = out.footprint;
    ctx.setLineDash([5, 4]);
    ctx.strokeStyle = "#555";
    ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
    ctx.setLineDash([]);
  }
  const [x0, y0, x1, y1] = pred;
  ctx.strokeStyle = "#2563eb";
  ctx.lineWidth = 2;
  ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
}

function updateProjection() {
  showValues($("projection"));
  const [hx, hy, hz] = [num("hx"), num("hy"), num("hz")];
  const pred = [num("px"), num("py"), num("px") + num("pw"), num("py") + num("ph")];
  const input = {
    camera: { azimuth: num("az"), elevation: num("el"), distance: num("dist"), focal: num("focal"), image_size: 512 },
    box3d: [-hx, -hy, -hz, hx, hy, hz],
    bbox2d: pred,
  };
  try {
    const out = call(project_scene, input);
    $("rpc").textContent = out.rpc.toFixed(4);
    const minDepth = Math.min(...out.depths);
    $("proj-status").textContent = out.valid
      ? `all corners in front of the camera (min depth ${minDepth.toFixed(3)}); dashed: footprint, blue: prediction`
      : `a corner is behind the camera (min depth ${minDepth.toFixed(3)}): projection invalid, RPC = 0`;
    $("proj-status").className = out.valid ? "" : "err";
    drawProjection(out, pred);
  } catch (e) {
    $("proj-status").textContent = String(e);
    $("proj-status").className = "err";
  }
}

const MEMBERS = [
  {
    text: '{"answer": "mug", "description": "a red mug", "bbox2d": [120, 180, 400, 460], "bbox3d": [420, 380, 450, 580, 600, 560], "kpts2d": [[260, 300], [300, 420]], "kpts3d": [[500, 500, 500]]}',
    rewards: { bbox2d: 0.82, bbox3d: 0.64, kpts2d: 1.0, kpts3d: 1.0, rpc: 0.71 },
  },
  {
    text: '{"answer": "mug", "description": "a mug", "bbox2d": [100, 150, 420, 470], "bbox3d": [400, 390], "kpts2d": [[250, 310]], "kpts3d": [[510, 490, 520], [700, 700, 700]]}',
    rewards: { bbox2d: 0.7, bbox3d: 0.0, kpts2d: 1.0, kpts3d: 0.5, rpc: 0.0 },
  },
  {
    text: 'Here: {"answer": "cup", "description": "a cup", "bbox2d": [140, 200, 380, 430], "bbox3d": [430, 400, 460, 570, 590, 550], "kpts2d": [[600, 100]], "kpts3d": [[520, 480, 500]]}',
    rewards: { bbox2d: 0.9, bbox3d: 0.8, kpts2d: 0.0, kpts3d: 1.0, rpc: 0.85 },
  },
];
const REWARD_KEYS = ["bbox2d", "bbox3d", "kpts2d", "kpts3d", "rpc"];

function buildMemberEditors() {
  const root = $("members");
  MEMBERS.forEach((m, i) => {
    const div = document.createElement("div");
    div.className = "member";
    const inputs = REWARD_KEYS.map(
      (k) => `${k} <input type="number" min="0" max="1" step="0.05" data-m="${i}" data-k="${k}" value="${m.rewards[k]}">`,
    ).join(" ");
    div.innerHTML = `<b>member ${i}</b><textarea rows="2" data-m="${i}">${m.text}</textarea><div>rewards: ${inputs}</div>`;
    root.appendChild(div);
  });
  root.addEventListener("input", (e) => {
    const i = +e.target.dataset.m;
    if (e.target.tagName === "TEXTAREA") MEMBERS[i].text = e.target.value;
    else MEMBERS[i].rewards[e.target.dataset.k] = parseFloat(e.target.value) || 0;
    updateRouting();
  });
}

const fmt = (v) => (v >= 0 ? "+" : "") + v.toFixed(3);

function updateRouting() {
  showValues($("routing"));
  const out = $("route-out");
  try {
    const res = call(route_group, { lambda: num("lambda"), members: MEMBERS });
    out.innerHTML = "";
    res.members.forEach((m, i) => {
      const div = document.createElement("div");
      div.className = "member";
      const a = m.advantages;
      const statuses = Object.entries(m.statuses).map(([k, v]) => `${k}: ${v}`).join(", ");
      div.innerHTML =
        `<b>member ${i}</b> (${statuses})<table><tr><th></th>${REWARD_KEYS.map((k) => `<th>${k}</th>`).join("")}` +
        `<th>background</th><th>broadcast</th></tr><tr><td>advantage</td>` +
        `${a.fields.map((v) => `<td>${fmt(v)}</td>`).join("")}<td>${fmt(a.rpc)}</td>` +
        `<td>${fmt(a.background)}</td><td>${fmt(a.broadcast)}</td></tr></table>`;
      const toks = document.createElement("div");
      toks.className = "tokens";
      m.pieces.forEach((p, t) => {
        const span = document.createElement("span");
        span.className = "tok " + (m.owners[t] === "background" ? "" : m.owners[t]);
        span.textContent = p;
        span.title = `${m.owners[t]}\nrouted ${fmt(m.routed[t])}\nbroadcast ${fmt(m.broadcast[t])}`;
        toks.appendChild(span);
      });
      div.appendChild(toks);
      out.appendChild(div);
    });
  } catch (e) {
    out.innerHTML = `<p class="err">${e}</p>`;
  }
}

function updateIou() {
  const a2 = numbers($("a2").value), b2 = numbers($("b2").value);
  const show = (id, input) => {
    try {
      $(id).textContent = call(box_iou, input).iou.toFixed(4);
      $(id).className = "big";
    } catch (e) {
      $(id).textContent = String(e);
      $(id).className = "err";
    }
  };
  show("iou2", { a2, b2 });
  show("iou3", { a3: numbers($("a3").value), b3: numbers($("b3").value) });
  const ctx = $("iou-canvas").getContext("2d");
  ctx.clearRect(0, 0, 320, 320);
  for (const [b, colour] of [[a2, "rgba(37,99,235,.35)"], [b2, "rgba(219,39,119,.35)"]]) {
    if (b.length === 4 && b.every(Number.isFinite)) {
      ctx.fillStyle = colour;
      ctx.fillRect(b[0], b[1], b[2] - b[0], b[3] - b[1]);
    }
  }
}

await init();
buildMemberEditors();
$("projection").addEventListener("input", updateProjection);
$("lambda").addEventListener("input", updateRouting);
$("iou").addEventListener("input", updateIou);
updateProjection();
updateRouting();
updateIou();
