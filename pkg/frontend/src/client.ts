/**
 * Line-delimited JSON client for the simulator's stdio bridge.
 *
 * One subprocess per client; requests carry integer ids and may be
 * pipelined, responses resolve by id. Simulator-side failures reject
 * with a BridgeError carrying the originating exception type and its
 * exact message text.
 */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";

/** Failure reported by the simulator, message text verbatim. */
export class BridgeError extends Error {
  /** Exception class name on the simulator side, e.g. "ConfigError". */
  readonly kind: string;

  constructor(kind: string, message: string) {
    super(message);
    this.name = "BridgeError";
    this.kind = kind;
  }
}

interface Pending {
  resolve: (result: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export interface BridgeOptions {
  /** Launch command, default ["python3", "-m", "tacsim.cli", "serve"]. */
  command?: string[];
  cwd?: string;
  env?: NodeJS.ProcessEnv;
}

export class BridgeClient {
  private readonly child: ChildProcessByStdio<Writable, Readable, null>;
  private readonly pending = new Map<number, Pending>();
  private nextId = 1;
  private closing = false;
  private exited: { code: number | null } | null = null;

  constructor(options: BridgeOptions = {}) {
    const argv = options.command ?? ["python3", "-m", "tacsim.cli", "serve"];
    this.child = spawn(argv[0] as string, argv.slice(1), {
      cwd: options.cwd,
      env: options.env,
      stdio: ["pipe", "pipe", "inherit"],
    });
    const lines = createInterface({ input: this.child.stdout });
    lines.on("line", (line) => this.onLine(line));
    this.child.on("exit", (code) => {
      this.exited = { code };
      this.failAll(new Error(`bridge process exited with code ${code}`));
    });
    this.child.on("error", (err) => this.failAll(err));
  }

  /** Send one request; resolves with the result object. */
  request(op: string, params: Record<string, unknown> = {}): Promise<Record<string, unknown>> {
    if (this.closing || this.exited) {
      return Promise.reject(new BridgeError("InvalidArgumentError", "bridge client is closed"));
    }
    const id = this.nextId++;
    const promise = new Promise<Record<string, unknown>>((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
    });
    this.child.stdin.write(`${JSON.stringify({ id, op, params })}\n`);
    return promise;
  }

  /** Ask the server to shut down and wait for the process to exit. */
  async close(): Promise<void> {
    if (this.exited || this.closing) {
      return;
    }
    const done = this.request("shutdown");
    this.closing = true;
    await done;
    if (!this.exited) {
      await new Promise<void>((resolve) => this.child.once("exit", () => resolve()));
    }
  }

  private onLine(line: string): void {
    let msg: Record<string, unknown>;
    try {
      msg = JSON.parse(line) as Record<string, unknown>;
    } catch {
      this.failAll(new Error(`bridge protocol desync, unparseable line: ${line.slice(0, 120)}`));
      this.child.kill();
      return;
    }
    const entry = typeof msg.id === "number" ? this.pending.get(msg.id) : undefined;
    if (entry === undefined) {
      // An id the client never issued (or null) means the streams are
      // out of step; every outstanding request is now unanswerable.
      this.failAll(new Error(`bridge protocol desync on response id ${String(msg.id)}`));
      this.child.kill();
      return;
    }
    this.pending.delete(msg.id as number);
    if (msg.ok === true) {
      entry.resolve((msg.result ?? {}) as Record<string, unknown>);
    } else {
      const err = (msg.error ?? {}) as { type?: string; message?: string };
      entry.reject(new BridgeError(err.type ?? "TacsimError", err.message ?? "unknown failure"));
    }
  }

  private failAll(err: Error): void {
    for (const entry of this.pending.values()) {
      entry.reject(err);
    }
    this.pending.clear();
  }
}
