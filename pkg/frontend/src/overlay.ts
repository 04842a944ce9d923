// Polygon overlay math: native-pixel polygons scale with the displayed image
// size so overlays stay glued to the imagery at any zoom.

export function scalePolygon(
  polygon: number[][],
  nativeWidth: number,
  nativeHeight: number,
  displayWidth: number,
  displayHeight: number,
): number[][] {
  const sx = displayWidth / nativeWidth;
  const sy = displayHeight / nativeHeight;
  return polygon.map(([x, y]) => [x * sx, y * sy]);
}

export function toSvgPoints(polygon: number[][]): string {
  return polygon.map(([x, y]) => `${round3(x)},${round3(y)}`).join(' ');
}

function round3(v: number): number {
  return Math.round(v * 1000) / 1000;
}
