// Playground wiring: reads the sliders, calls into the wasm module, and
// renders with plain canvas 2D. Build the module first:
//
//   wasm-pack build crates/wasm-demo --target web --out-dir www/pkg
//
// then serve this directory (any static server works).

import init, {
  gen_signal, diagram_points, persistence_image,
  sample_lambdas, mix_signals, tempered_probs, kd_loss,
} from './pkg/topokd_demo.js';

const $ = (id) => document.getElementById(id);
const LENGTH = 128;

function plotSeries(canvas, series, color = '#2563eb') {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  let lo = Math.min(...series), hi = Math.max(...series);
  if (hi - lo < 1e-9) { hi = lo + 1; }
  const pad = 8;
  const x = (i) => pad + (w - 2 * pad) * i / (series.length - 1);
  const y = (v) => h - pad - (h - 2 * pad) * (v - lo) / (hi - lo);
  if (lo < 0 && hi > 0) {
    ctx.strokeStyle = '#e5e9f0';
    ctx.beginPath(); ctx.moveTo(pad, y(0)); ctx.lineTo(w - pad, y(0)); ctx.stroke();
  }
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  series.forEach((v, i) => i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v)));
  ctx.stroke();
}

function plotDiagram(canvas, triples) {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const births = [], deaths = [];
  for (let i = 0; i < triples.length; i += 3) {
    births.push(triples[i]); deaths.push(triples[i + 1]);
  }
  let lo = Math.min(...births, ...deaths), hi = Math.max(...births, ...deaths);
  if (hi - lo < 1e-9) { lo -= 0.5; hi += 0.5; }
  const span = hi - lo; lo -= span * 0.08; hi += span * 0.08;
  const pad = 10;
  const sx = (v) => pad + (w - 2 * pad) * (v - lo) / (hi - lo);
  const sy = (v) => h - pad - (h - 2 * pad) * (v - lo) / (hi - lo);
  ctx.strokeStyle = '#cbd5e1';
  ctx.beginPath(); ctx.moveTo(sx(lo), sy(lo)); ctx.lineTo(sx(hi), sy(hi)); ctx.stroke();
  for (let i = 0; i < triples.length; i += 3) {
    const essential = triples[i + 2] > 0.5;
    ctx.fillStyle = essential ? '#dc2626' : '#2563eb';
    ctx.beginPath();
    ctx.arc(sx(triples[i]), sy(triples[i + 1]), essential ? 4.5 : 3, 0, Math.PI * 2);
    ctx.fill();
  }
}

// Dark-to-bright single-hue ramp for image grids.
function heat(v) {
  const t = Math.max(0, Math.min(1, v));
  const r = Math.round(12 + 243 * Math.pow(t, 0.65));
  const g = Math.round(17 + 150 * Math.pow(t, 1.1));
  const b = Math.round(44 + 60 * t);
  return [r, g, b];
}

function plotImage(canvas, grid, res) {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  const img = ctx.createImageData(w, h);
  for (let py = 0; py < h; py++) {
    // Row 0 of the grid is the lowest persistence band; draw it at the
    // bottom.
    const gy = Math.min(res - 1, Math.floor((1 - py / h) * res));
    for (let px = 0; px < w; px++) {
      const gx = Math.min(res - 1, Math.floor(px / w * res));
      const [r, g, b] = heat(grid[gy * res + gx]);
      const o = (py * w + px) * 4;
      img.data[o] = r; img.data[o + 1] = g; img.data[o + 2] = b; img.data[o + 3] = 255;
    }
  }
  ctx.putImageData(img, 0, 0);
}

function plotHistogram(canvas, values, bins = 40) {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const counts = new Array(bins).fill(0);
  for (const v of values) {
    counts[Math.min(bins - 1, Math.floor(v * bins))]++;
  }
  const max = Math.max(...counts);
  ctx.fillStyle = '#2563eb';
  const bw = w / bins;
  counts.forEach((c, i) => {
    const bh = (h - 6) * c / max;
    ctx.fillRect(i * bw + 0.5, h - bh, bw - 1, bh);
  });
}

function plotBars(canvas, teacher, student) {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const k = teacher.length;
  const group = w / k;
  for (let i = 0; i < k; i++) {
    const tb = (h - 22) * teacher[i];
    const sb = (h - 22) * student[i];
    ctx.fillStyle = '#dc2626';
    ctx.fillRect(i * group + group * 0.14, h - 16 - tb, group * 0.3, tb);
    ctx.fillStyle = '#2563eb';
    ctx.fillRect(i * group + group * 0.52, h - 16 - sb, group * 0.3, sb);
    ctx.fillStyle = '#5d6b7d';
    ctx.font = '11px system-ui';
    ctx.fillText(`c${i}`, i * group + group * 0.42, h - 3);
  }
  ctx.fillStyle = '#dc2626'; ctx.fillRect(6, 5, 10, 10);
  ctx.fillStyle = '#5d6b7d'; ctx.fillText('teacher', 20, 14);
  ctx.fillStyle = '#2563eb'; ctx.fillRect(80, 5, 10, 10);
  ctx.fillStyle = '#5d6b7d'; ctx.fillText('student', 94, 14);
}

function plotCurve(canvas, xs, ys, markX, markY) {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const lo = 0, hi = Math.max(...ys) * 1.1 + 1e-9;
  const pad = 10;
  const sx = (x) => pad + (w - 2 * pad) * (x - xs[0]) / (xs[xs.length - 1] - xs[0]);
  const sy = (y) => h - pad - (h - 2 * pad) * (y - lo) / (hi - lo);
  ctx.strokeStyle = '#2563eb';
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  xs.forEach((x, i) => i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i])));
  ctx.stroke();
  ctx.fillStyle = '#dc2626';
  ctx.beginPath();
  ctx.arc(sx(markX), sy(markY), 4, 0, Math.PI * 2);
  ctx.fill();
}

function bindOutputs(ids) {
  for (const id of ids) {
    const input = $(id);
    const out = $(`${id}-val`);
    if (out) {
      const show = () => { out.textContent = input.value; };
      input.addEventListener('input', show);
      show();
    }
  }
}

function setupPiPanel() {
  const ids = ['pi-cycles', 'pi-noise', 'pi-phase', 'pi-sigma', 'pi-res', 'pi-seed'];
  bindOutputs(ids);
  const render = () => {
    const family = $('pi-family').value;
    const signal = gen_signal(
      family,
      Number($('pi-cycles').value),
      1.0,
      Number($('pi-noise').value),
      Number($('pi-phase').value),
      LENGTH,
      BigInt($('pi-seed').value),
    );
    plotSeries($('pi-signal'), Array.from(signal));
    plotDiagram($('pi-diagram'), diagram_points(signal));
    const res = Number($('pi-res').value);
    const lo = Math.min(...signal), hi = Math.max(...signal);
    const span = Math.max(hi - lo, 0.5);
    const grid = persistence_image(
      signal,
      Number($('pi-sigma').value) * span,
      lo - 0.1 * span,
      hi + 0.1 * span,
      res,
      $('pi-essential').checked,
    );
    plotImage($('pi-image'), grid, res);
  };
  for (const id of [...ids, 'pi-family', 'pi-essential']) {
    $(id).addEventListener('input', render);
  }
  render();
}

function setupMixPanel() {
  bindOutputs(['mix-lambda', 'mix-alpha']);
  const a = gen_signal('sine', 3.0, 1.0, 0.05, 0.4, LENGTH, 1n);
  const b = gen_signal('sine', 9.0, 1.0, 0.05, 2.1, LENGTH, 2n);
  const render = () => {
    const lambda = Number($('mix-lambda').value);
    plotSeries($('mix-signal'), Array.from(mix_signals(a, b, lambda)), '#7c3aed');
    const alpha = Number($('mix-alpha').value);
    plotHistogram($('mix-hist'), Array.from(sample_lambdas(alpha, 10000, 5n)));
  };
  $('mix-lambda').addEventListener('input', render);
  $('mix-alpha').addEventListener('input', render);
  render();
}

function setupKdPanel() {
  bindOutputs(['kd-temp', 'kd-conf', 'kd-spread']);
  const render = () => {
    const temp = Number($('kd-temp').value);
    const conf = Number($('kd-conf').value);
    const spread = Number($('kd-spread').value);
    const teacher = [conf, 0.4 * conf, 0.0, -0.3 * conf];
    const student = [spread, -0.2 * spread, 0.5 * spread, 0.0];
    plotBars(
      $('kd-bars'),
      Array.from(tempered_probs(teacher, temp)),
      Array.from(tempered_probs(student, temp)),
    );
    const kd = kd_loss(teacher, student, temp);
    $('kd-value').textContent = kd.toFixed(5);
    const xs = [], ys = [];
    for (let t = 0.5; t <= 16; t += 0.25) {
      xs.push(t);
      ys.push(kd_loss(teacher, student, t));
    }
    plotCurve($('kd-curve'), xs, ys, temp, kd);
  };
  for (const id of ['kd-temp', 'kd-conf', 'kd-spread']) {
    $(id).addEventListener('input', render);
  }
  render();
}

init().then(() => {
  setupPiPanel();
  setupMixPanel();
  setupKdPanel();
}).catch((e) => {
  const el = $('boot-error');
  el.hidden = false;
  el.textContent =
    `failed to load the wasm module: ${e}\n` +
    'build it with: wasm-pack build crates/wasm-demo --target web --out-dir www/pkg';
});
