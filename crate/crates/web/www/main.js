// Built with: wasm-bindgen --target web --out-dir crates/web/www/pkg <wlnav_web.wasm>
import init, { Scene, frechet, heightmap_side } from "./pkg/wlnav_web.js";

const $ = (id) => document.getElementById(id);
let scene = null;

function drawScene() {
  const side = scene.image_side();
  const cv = $("scene");
  cv.width = side;
  cv.height = side;
  const img = new ImageData(new Uint8ClampedArray(scene.rgba(true)), side, side);
  cv.getContext("2d").putImageData(img, 0, 0);
}

function drawMap(t) {
  const n = heightmap_side();
  const h = scene.heightmap(t);
  const ctx = $("map").getContext("2d");
  const px = $("map").width / n;
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const g = Math.round(255 * (1 - h[i * n + j] / 0.3));
      ctx.fillStyle = `rgb(${g},${g},${g})`;
      // Row 0 is the bottom of the window.
      ctx.fillRect(j * px, (n - 1 - i) * px, px, px);
    }
  }
  const [x, y, th, hh, w] = scene.state(t);
  $("state").textContent =
    `x ${x.toFixed(2)} y ${y.toFixed(2)} θ ${(th * 180 / Math.PI).toFixed(0)}° h ${hh.toFixed(2)} w ${w.toFixed(2)}`;
}

function build() {
  const b = $("behavior").value;
  const seed = BigInt($("seed").value || 0);
  try {
    scene = new Scene(b, seed);
    const other = new Scene(b, seed + 1n);
    $("frechet").textContent = frechet(scene.path(), other.path()).toFixed(3);
    other.free();
  } catch (e) {
    $("env").textContent = String(e);
    return;
  }
  $("step").max = scene.steps();
  $("step").value = 0;
  $("env").textContent = scene.env_text();
  drawScene();
  drawMap(0);
}

await init();
$("build").addEventListener("click", build);
$("step").addEventListener("input", (e) => drawMap(Number(e.target.value)));
build();
