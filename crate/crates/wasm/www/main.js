import init, { run_demo, estimate_heat, window_probability } from "./pkg/xmas_wasm.js";

const SIZE = 96;
const $ = (id) => document.getElementById(id);

function drawScene(kind) {
  const ctx = $("c-clean").getContext("2d");
  const img = ctx.createImageData(SIZE, SIZE);
  for (let r = 0; r < SIZE; r++) {
    for (let c = 0; c < SIZE; c++) {
      const x = c / SIZE, y = r / SIZE;
      let rgb;
      if (kind === "sky") {
        rgb = y < 0.45
          ? [215 - 40 * x, 225 - 40 * x, 250]
          : [60 + 80 * y, 140 - 40 * x, 40];
      } else if (kind === "disc") {
        const d = Math.hypot(x - 0.5, y - 0.5);
        const v = Math.max(5, 250 * (1 - 1.8 * d));
        rgb = [v, v - 30, v - 60];
      } else {
        const s = (k) => 128 + 110 * Math.sin(2 * Math.PI * (x + 0.3 * k)) * (0.6 + 0.4 * y);
        rgb = [s(0), s(1), s(2)];
      }
      const i = 4 * (r * SIZE + c);
      img.data.set([...rgb.map(Math.round), 255], i);
    }
  }
  ctx.putImageData(img, 0, 0);
}

function drawUpload(file) {
  const bitmap = new Image();
  bitmap.onload = () => {
    const ctx = $("c-clean").getContext("2d");
    ctx.drawImage(bitmap, 0, 0, SIZE, SIZE);
    URL.revokeObjectURL(bitmap.src);
    run();
  };
  bitmap.src = URL.createObjectURL(file);
}

function put(id, rgba) {
  const ctx = $(id).getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
}

function run() {
  $("error").textContent = "";
  try {
    const clean = $("c-clean").getContext("2d").getImageData(0, 0, SIZE, SIZE).data;
    const kernel = Number($("kernel").value);
    const t0 = performance.now();
    const demo = run_demo(
      SIZE, SIZE, new Uint8Array(clean.buffer),
      Number($("eps").value), $("mode").value === "iterative", Number($("seed").value),
      kernel, Number($("k").value), Number($("steps").value), Number($("quality").value),
    );
    const ms = performance.now() - t0;
    const adv = demo.perturbed;
    put("c-adv", adv);
    put("c-miti", demo.mitigated);
    const heat = estimate_heat(SIZE, SIZE, adv, kernel);
    put("c-heat", heat.rgba);
    $("heat-cap").textContent =
      `estimate: mag_sub ${heat.magSub.toFixed(2)}, mag_add ${heat.magAdd.toFixed(2)}`;
    $("summary").textContent =
      `${demo.stepCount} steps, stop: ${demo.stopReason}. ` +
      `mean abs error ${demo.maeBefore.toFixed(2)} -> ${demo.maeAfter.toFixed(2)}, ` +
      `L-inf error ${demo.linfBefore.toFixed(2)} -> ${demo.linfAfter.toFixed(2)} (${ms.toFixed(0)} ms)`;

    const rows = ["<tr><th>step</th><th>label</th><th>conf</th><th>mag_sub</th><th>mag_add</th><th>updated</th><th>held</th></tr>"];
    for (let i = 0; i < demo.stepCount; i++) {
      const cells = demo.stepRow(i).split("\t");
      rows.push("<tr>" + cells.map((v) => `<td>${v}</td>`).join("") + "</tr>");
    }
    $("trace").innerHTML = rows.join("");
    heat.free();
    demo.free();
  } catch (e) {
    $("error").textContent = String(e);
  }
}

function probabilities() {
  for (const n of [1, 2, 3]) {
    const [eq, eqDec, red, redDec] = window_probability(n);
    const tr = document.createElement("tr");
    tr.innerHTML = [n, eq, eqDec, red, redDec].map((v) => `<td>${v}</td>`).join("");
    $("prob").appendChild(tr);
  }
}

await init();
drawScene($("scene").value);
probabilities();
run();

$("eps").addEventListener("input", () => { $("eps-v").textContent = $("eps").value; });
$("eps").addEventListener("change", run);
$("scene").addEventListener("change", () => { drawScene($("scene").value); run(); });
$("upload").addEventListener("change", (e) => { if (e.target.files[0]) drawUpload(e.target.files[0]); });
for (const id of ["mode", "seed", "kernel", "k", "steps", "quality"]) {
  $(id).addEventListener("change", run);
}
$("run").addEventListener("click", run);
