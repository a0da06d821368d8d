import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // the e2e test spawns the API server and GP fits run single-core
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
});
