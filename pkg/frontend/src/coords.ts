/**
 * Canvas → frame coordinate mapping.
 *
 * The canvas may be CSS-scaled relative to the frame resolution; a tap must
 * land within 1 px of the frame pixel shown under the pointer.
 */

export interface CanvasBox {
  left: number;
  top: number;
  width: number; // CSS pixels
  height: number;
}

export function canvasToFrame(
  clientX: number,
  clientY: number,
  box: CanvasBox,
  frameWidth: number,
  frameHeight: number
): { u: number; v: number } {
  const u = ((clientX - box.left) / box.width) * frameWidth;
  const v = ((clientY - box.top) / box.height) * frameHeight;
  return {
    u: Math.min(Math.max(u, 0), frameWidth - 1),
    v: Math.min(Math.max(v, 0), frameHeight - 1),
  };
}
