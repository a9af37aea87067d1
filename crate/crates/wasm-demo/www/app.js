import init, { simulate_session, savings_curve, policy_table } from "./pkg/cachesim_wasm.js";

const COLORS = {
  "no-cache": "#7a7f8c",
  "full-context": "#d2691e",
  "system-prompt": "#2a7ab0",
  "exclude-tool-results": "#3c9d5d",
};

const status = document.getElementById("status");

function call(fn, request) {
  status.textContent = "";
  try {
    return JSON.parse(fn(JSON.stringify(request)));
  } catch (err) {
    status.textContent = String(err.message ?? err);
    return null;
  }
}

function axes(ctx, w, h, pad, xMax, yMin, yMax) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#889";
  ctx.fillStyle = "#445";
  ctx.font = "11px system-ui";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  const ticks = 4;
  for (let i = 0; i <= ticks; i++) {
    const v = yMin + ((yMax - yMin) * i) / ticks;
    const y = h - pad - ((h - 1.5 * pad) * i) / ticks;
    ctx.fillText(formatTick(v), 2, y + 4);
  }
  return {
    x: (v) => pad + ((w - 1.5 * pad) * v) / Math.max(xMax, 1),
    y: (v) => h - pad - ((h - 1.5 * pad) * (v - yMin)) / (yMax - yMin || 1),
  };
}

function formatTick(v) {
  if (Math.abs(v) >= 100) return v.toFixed(0);
  if (Math.abs(v) >= 1) return v.toFixed(1);
  return v.toFixed(4);
}

function lineChart(canvas, series, xLabels) {
  const ctx = canvas.getContext("2d");
  const all = series.flatMap((s) => s.points.map((p) => p[1]));
  const yMin = Math.min(0, ...all);
  const yMax = Math.max(...all, 1e-9);
  const xMax = Math.max(...series.flatMap((s) => s.points.map((p) => p[0])));
  const pad = 44;
  const t = axes(ctx, canvas.width, canvas.height, pad, xMax, yMin, yMax);
  ctx.fillStyle = "#445";
  xLabels.forEach(([x, label]) => ctx.fillText(label, t.x(x) - 8, canvas.height - pad + 16));
  for (const s of series) {
    ctx.strokeStyle = COLORS[s.mode] ?? "#000";
    ctx.fillStyle = ctx.strokeStyle;
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.points.forEach(([x, y], i) => (i ? ctx.lineTo(t.x(x), t.y(y)) : ctx.moveTo(t.x(x), t.y(y))));
    ctx.stroke();
    s.points.forEach(([x, y]) => ctx.fillRect(t.x(x) - 2, t.y(y) - 2, 4, 4));
  }
  ctx.lineWidth = 1;
  let ly = 12;
  for (const s of series) {
    ctx.fillStyle = COLORS[s.mode];
    ctx.fillRect(canvas.width - 150, ly - 8, 10, 10);
    ctx.fillStyle = "#223";
    ctx.fillText(s.mode, canvas.width - 135, ly + 1);
    ly += 15;
  }
}

function swatch(mode) {
  return `<span class="swatch" style="background:${COLORS[mode]}"></span>${mode}`;
}

function renderSession(result) {
  const series = (key) =>
    result.modes.map((m) => ({ mode: m.mode, points: m.calls.map((c) => [c.call_index, key(c)]) }));
  const n = result.modes[0].calls.length;
  const labels = Array.from({ length: n }, (_, i) => [i, String(i + 1)]).filter(
    (_, i) => n <= 12 || i % Math.ceil(n / 12) === 0,
  );
  lineChart(document.getElementById("cost-chart"), series((c) => c.cost_usd), labels);
  lineChart(document.getElementById("ttft-chart"), series((c) => c.ttft_ms), labels);

  const rows = result.modes
    .map((m) => {
      const u = m.calls.reduce(
        (a, c) => ({ read: a.read + c.usage.cached_read, write: a.write + c.usage.cache_write }),
        { read: 0, write: 0 },
      );
      return `<tr><td>${swatch(m.mode)}</td><td>$${m.mean_session_cost_usd.toFixed(4)}</td>
        <td>${m.cost_saving_pct.toFixed(1)}%</td><td>${m.mean_ttft_ms.toFixed(0)}</td>
        <td>${m.ttft_improvement_pct.toFixed(1)}%</td><td>${u.read}</td><td>${u.write}</td></tr>`;
    })
    .join("");
  document.getElementById("session-table").innerHTML =
    `<tr><th>mode (${result.sessions} sessions)</th><th>mean cost</th><th>saving</th>
     <th>mean TTFT ms</th><th>TTFT gain</th><th>cached read</th><th>cache write</th></tr>${rows}`;
}

function renderCurve(rows) {
  const values = [...new Set(rows.map((r) => r.value))];
  const modes = [...new Set(rows.map((r) => r.mode))];
  const series = modes.map((mode) => ({
    mode,
    points: rows.filter((r) => r.mode === mode).map((r) => [values.indexOf(r.value), r.median_cost_saving_pct]),
  }));
  lineChart(
    document.getElementById("curve-chart"),
    series,
    values.map((v, i) => [i, String(v)]),
  );
}

function renderPolicies(policies) {
  const rows = policies
    .map((p) => {
      const pr = p.prices;
      return `<tr><td>${p.name}</td><td>${p.mode}</td><td>${p.min_cache_tokens}</td>
        <td>${p.granularity_tokens}</td><td>${p.ttl_seconds}</td><td>${p.refresh_on_read}</td>
        <td>${pr.input_per_mtok}</td><td>${pr.cached_read_per_mtok}</td>
        <td>${pr.cache_write_per_mtok ?? "n/a"}</td><td>${pr.output_per_mtok}</td></tr>`;
    })
    .join("");
  document.getElementById("policy-table").innerHTML =
    `<tr><th>policy</th><th>mode</th><th>min tokens</th><th>granularity</th><th>ttl s</th>
     <th>refresh</th><th>input $/M</th><th>cached $/M</th><th>write $/M</th><th>output $/M</th></tr>${rows}`;
}

function num(form, name) {
  return Number(form.elements[name].value);
}

function runSession(form) {
  const result = call(simulate_session, {
    policy: form.elements.policy.value,
    workload: {
      system_prompt_tokens: num(form, "system"),
      tool_calls: num(form, "tools"),
      tool_result_tokens: num(form, "result"),
      sessions: num(form, "sessions"),
    },
    latency: { noise_sigma: 0.1, per_write_token_ms: 0.5 },
  });
  if (result) renderSession(result);
}

function runCurve(form) {
  const values = form.elements.values.value
    .split(",")
    .map((s) => Number(s.trim()))
    .filter((v) => Number.isFinite(v) && v > 0);
  const rows = call(savings_curve, {
    policy: form.elements.policy.value,
    dimension: form.elements.dimension.value,
    values,
    workload: { sessions: 3 },
  });
  if (rows) renderCurve(rows);
}

await init();
const policies = JSON.parse(policy_table());
renderPolicies(policies);
for (const select of document.querySelectorAll(".policy-select")) {
  select.innerHTML = policies.map((p) => `<option>${p.name}</option>`).join("");
}

const sessionForm = document.getElementById("session-form");
sessionForm.addEventListener("submit", (e) => {
  e.preventDefault();
  runSession(sessionForm);
});
const curveForm = document.getElementById("curve-form");
curveForm.addEventListener("submit", (e) => {
  e.preventDefault();
  runCurve(curveForm);
});
curveForm.elements.dimension.addEventListener("change", () => {
  curveForm.elements.values.value =
    curveForm.elements.dimension.value === "tool-count" ? "3,5,10,20,40" : "1000,2000,5000,10000,20000";
});
runSession(sessionForm);
runCurve(curveForm);
