// The fixed zoom rule for single-pixel visibility.

import assert from "node:assert/strict";
import { test } from "node:test";

import { zoomFactor } from "../src/render.js";

test("images up to 128px render at x4 zoom", () => {
  assert.equal(zoomFactor(64, 64), 4);
  assert.equal(zoomFactor(128, 128), 4);
  assert.equal(zoomFactor(16, 100), 4);
});

test("larger images fall back to x2", () => {
  assert.equal(zoomFactor(256, 256), 2);
  assert.equal(zoomFactor(129, 64), 2);
});
