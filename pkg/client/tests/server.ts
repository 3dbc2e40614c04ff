/** Spawns a real archive server for the test suite. */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtemp, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface LiveServer {
  baseUrl: string;
  username: string;
  password: string;
  stop: () => Promise<void>;
}

export async function startServer(): Promise<LiveServer> {
  const dir = await mkdtemp(join(tmpdir(), "forecast-archive-"));
  const port = 20000 + Math.floor(Math.random() * 20000);
  const username = "alice";
  const password = "wonderland";
  const child: ChildProcess = spawn(
    "python3",
    [
      "-m",
      "forecast_archive.cli",
      "serve",
      "--db",
      join(dir, "server.db"),
      "--port",
      String(port),
      "--user",
      `${username}:${password}`,
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let output = "";
  child.stdout?.on("data", (chunk) => (output += chunk));
  child.stderr?.on("data", (chunk) => (output += chunk));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    if (child.exitCode !== null) {
      throw new Error(`server exited early:\n${output}`);
    }
    try {
      const response = await fetch(`${baseUrl}/api/projects`);
      if (response.ok) {
        break;
      }
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      child.kill("SIGKILL");
      throw new Error(`server did not come up:\n${output}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }

  return {
    baseUrl,
    username,
    password,
    stop: async () => {
      child.kill("SIGINT");
      await new Promise<void>((resolve) => {
        const timer = setTimeout(() => {
          child.kill("SIGKILL");
          resolve();
        }, 5000);
        child.once("exit", () => {
          clearTimeout(timer);
          resolve();
        });
      });
      await rm(dir, { recursive: true, force: true });
    },
  };
}

/** Run the archive CLI against the live server; returns stdout. */
export function runCli(args: string[]): Promise<{ code: number; output: string }> {
  return new Promise((resolve, reject) => {
    const child = spawn("python3", ["-m", "forecast_archive.cli", ...args], {
      stdio: ["ignore", "pipe", "pipe"],
    });
    let output = "";
    child.stdout?.on("data", (chunk) => (output += chunk));
    child.stderr?.on("data", (chunk) => (output += chunk));
    child.on("error", reject);
    child.on("exit", (code) => resolve({ code: code ?? -1, output }));
  });
}
