import init, { facePixels, meshSvg, blendPixels, synthesizePixels } from "./pkg/srefi_web.js";

const SIDE = 256;
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function paint(canvas, rgba) {
  const data = new ImageData(new Uint8ClampedArray(rgba), SIDE, SIDE);
  canvas.getContext("2d").putImageData(data, 0, 0);
}

function guarded(f) {
  return () => {
    try {
      f();
      $("status").textContent = "";
    } catch (e) {
      $("status").textContent = String(e);
    }
  };
}

const drawMesh = guarded(() => {
  const seed = num("mesh-seed");
  paint($("mesh-face"), facePixels(seed, SIDE));
  $("mesh-svg").innerHTML = meshSvg(seed, SIDE, $("mesh-initial").checked);
  const svg = $("mesh-svg").firstElementChild;
  svg.setAttribute("width", SIDE);
  svg.setAttribute("height", SIDE);
});

const drawBlend = guarded(() => {
  paint($("blend-out"), blendPixels(num("blend-a"), num("blend-b"), SIDE, num("blend-seam"), num("blend-levels")));
});

const drawSynth = guarded(() => {
  paint($("syn-out"), synthesizePixels(num("syn-seed"), SIDE, num("syn-donors"), num("syn-c"), 4));
});

await init();
for (const id of ["mesh-seed", "mesh-initial"]) $(id).addEventListener("input", drawMesh);
for (const id of ["blend-a", "blend-b", "blend-seam", "blend-levels"]) $(id).addEventListener("input", drawBlend);
$("syn-go").addEventListener("click", drawSynth);
drawMesh();
drawBlend();
drawSynth();
