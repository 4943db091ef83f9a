// Canvas rendering: the image auto-zoomed around the proposed pixel with a
// red ring marking it, so a single pixel is visible to the eye.

export function zoomFactor(width: number, height: number): number {
  // Fixed rule: small images (<=128px on both sides) render at x4.
  return width <= 128 && height <= 128 ? 4 : 2;
}

export interface ProposalDrawing {
  canvas: HTMLCanvasElement;
  image: HTMLImageElement;
  row: number;
  col: number;
}

export function drawProposal({ canvas, image, row, col }: ProposalDrawing): void {
  const zoom = zoomFactor(image.naturalWidth, image.naturalHeight);
  canvas.width = image.naturalWidth * zoom;
  canvas.height = image.naturalHeight * zoom;
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(image, 0, 0, canvas.width, canvas.height);

  // Red ring plus crosshair ticks centered on the proposed pixel.
  const cx = (col + 0.5) * zoom;
  const cy = (row + 0.5) * zoom;
  const r = Math.max(8, zoom * 2);
  ctx.strokeStyle = "#e00";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(cx, cy, r, 0, 2 * Math.PI);
  ctx.stroke();
  for (const [dx, dy] of [
    [-1, 0],
    [1, 0],
    [0, -1],
    [0, 1],
  ]) {
    ctx.beginPath();
    ctx.moveTo(cx + dx * (r + 2), cy + dy * (r + 2));
    ctx.lineTo(cx + dx * (r + 8), cy + dy * (r + 8));
    ctx.stroke();
  }
  // Outline the exact pixel at high zoom so it is unambiguous.
  if (zoom >= 4) {
    ctx.strokeStyle = "#fff";
    ctx.lineWidth = 1;
    ctx.strokeRect(col * zoom + 0.5, row * zoom + 0.5, zoom - 1, zoom - 1);
  }
}

export function canvasPixelFromClick(
  canvas: HTMLCanvasElement,
  image: HTMLImageElement,
  clientX: number,
  clientY: number,
): { row: number; col: number } {
  const rect = canvas.getBoundingClientRect();
  const zoom = zoomFactor(image.naturalWidth, image.naturalHeight);
  const scaleX = canvas.width / rect.width;
  const scaleY = canvas.height / rect.height;
  const col = Math.floor(((clientX - rect.left) * scaleX) / zoom);
  const row = Math.floor(((clientY - rect.top) * scaleY) / zoom);
  return { row, col };
}
