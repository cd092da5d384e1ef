// Canvas renderer for stacked multi-channel trajectories.

import type { ChannelSeries } from "./model.js";

const COLORS = ["#2563eb", "#0891b2", "#059669", "#ca8a04", "#dc2626", "#7c3aed"];

export function drawTrajectories(
  canvas: HTMLCanvasElement,
  series: ChannelSeries[],
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || series.length === 0) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);

  const lane = height / series.length;
  let maxAbs = 1e-9;
  for (const s of series) {
    for (const v of s.points) maxAbs = Math.max(maxAbs, Math.abs(v));
  }

  series.forEach((s, row) => {
    const mid = lane * (row + 0.5);
    ctx.strokeStyle = "#e5e7eb";
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(0, mid);
    ctx.lineTo(width, mid);
    ctx.stroke();

    ctx.strokeStyle = COLORS[row % COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    const step = s.points.length > 1 ? width / (s.points.length - 1) : 0;
    s.points.forEach((v, i) => {
      const x = i * step;
      const y = mid - (v / maxAbs) * (lane * 0.45);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  });
}
