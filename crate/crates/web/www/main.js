import init, { Demo } from "./pkg/tomobench_web.js";

const $ = (id) => document.getElementById(id);
let demo = null;

function draw(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function status(text) {
  $("status").textContent = text;
}

// Lets the status line repaint before a long synchronous call.
function busy(text, f) {
  status(text);
  setTimeout(() => {
    const t0 = performance.now();
    try {
      f();
      status(`done in ${((performance.now() - t0) / 1000).toFixed(2)} s`);
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 20);
}

function simulate() {
  const rgba = demo.simulate(+$("angles").value, +$("photons").value, +$("wedge").value);
  draw($("sino"), rgba, demo.width(), demo.height());
}

function showRec(label, rgba) {
  draw($("rec"), rgba, demo.width(), demo.height());
  $("rec-cap").textContent = `${label}: PSNR ${demo.psnr().toFixed(2)} dB, SSIM ${demo.ssim().toFixed(4)}`;
}

function fresh() {
  demo?.free();
  demo = new Demo(+$("size").value, +$("seed").value);
  draw($("ref"), demo.reference(), demo.size(), demo.size());
  simulate();
  showRec("FBP", demo.fbp($("hann").checked));
}

await init();
$("wedge").oninput = () => ($("wedge-out").textContent = $("wedge").value);
$("new").onclick = () => busy("building phantom...", fresh);
$("simulate").onclick = () => busy("simulating...", simulate);
$("fbp").onclick = () => busy("FBP...", () => showRec("FBP", demo.fbp($("hann").checked)));
$("tv").onclick = () =>
  busy("TV reconstruction...", () => {
    const rel = Math.pow(10, +$("lambda").value);
    showRec(`TV, weight 1e${$("lambda").value} max(y)`, demo.tv(rel, +$("iters").value));
  });
busy("building phantom...", fresh);
