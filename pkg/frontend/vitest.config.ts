import { defineConfig } from "vitest/config";

// Each test file drives a live simulator subprocess on one CPU core;
// parallel files would contend for it and the soft-body steps are slow.
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    fileParallelism: false,
    testTimeout: 600_000,
    hookTimeout: 120_000,
  },
});
