// Keyboard-to-class bindings. The server sends the authoritative keymap
// with every proposal; the default sequence here only mirrors the server's
// fallback (first C characters of a fixed home-row-first sequence).

export const DEFAULT_KEY_SEQUENCE = "asdfghjkl;qwertyuiopzxcvbnm,./";

export interface KeyBinding {
  key: string;
  class_id: number;
  name: string;
  color: [number, number, number];
}

export function bindingFor(keymap: KeyBinding[], key: string): KeyBinding | undefined {
  return keymap.find((b) => b.key === key);
}

export function cssColor(color: [number, number, number]): string {
  return `rgb(${color[0]}, ${color[1]}, ${color[2]})`;
}
