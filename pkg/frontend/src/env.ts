/**
 * Environment handles over the bridge: makeEnv, step, reset, close,
 * plus a vectorized wrapper that pipelines batches over one subprocess.
 */

import { BridgeClient, BridgeError } from "./client.js";
import {
  decodeObservation,
  decodeTimings,
  observationDigest,
  type Observation,
  type StageTimings,
} from "./codec.js";

export const MODE_RIGID = "rigid-compliant";
export const MODE_SOFT = "soft-ipc";

export interface Action {
  /** Case velocity command: vx, vy, vz, wx, wy, wz. */
  twist: ArrayLike<number>;
  /** Grip opening rate for two-sensor rigs, m/s. */
  aperture?: number;
}

export interface StepResult {
  obs: Observation;
  timings: StageTimings;
}

export interface MakeEnvOptions {
  /** Scene config as a JSON string; omitted means the task preset. */
  configJson?: string;
  mode?: typeof MODE_RIGID | typeof MODE_SOFT;
  seed?: number;
  /** Recompute each observation digest locally, default true. */
  verifyDigest?: boolean;
}

/** Raised when a decoded observation does not hash to the digest the
 * simulator computed, i.e. the boundary crossing lost information. */
export class DigestMismatchError extends Error {
  constructor(expected: string, actual: string) {
    super(`observation digest mismatch: simulator ${expected}, decoded ${actual}`);
    this.name = "DigestMismatchError";
  }
}

export class EnvHandle {
  readonly task: string;
  /** Config echo from the simulator, fully resolved. */
  readonly config: Record<string, unknown>;
  /** Length of the scripted demonstration for this task. */
  readonly episodeLength: number;

  private readonly client: BridgeClient;
  private readonly handle: number;
  private readonly verifyDigest: boolean;
  private isClosed = false;

  private constructor(
    client: BridgeClient,
    handle: number,
    task: string,
    config: Record<string, unknown>,
    episodeLength: number,
    verifyDigest: boolean,
  ) {
    this.client = client;
    this.handle = handle;
    this.task = task;
    this.config = config;
    this.episodeLength = episodeLength;
    this.verifyDigest = verifyDigest;
  }

  static async make(
    client: BridgeClient,
    task: string,
    options: MakeEnvOptions = {},
  ): Promise<EnvHandle> {
    const params: Record<string, unknown> = { task };
    if (options.configJson !== undefined) {
      params.config = JSON.parse(options.configJson); // SyntaxError names the position
    }
    if (options.mode !== undefined) {
      params.mode = options.mode;
    }
    if (options.seed !== undefined) {
      params.seed = options.seed;
    }
    const result = await client.request("make_env", params);
    return new EnvHandle(
      client,
      result.env as number,
      task,
      result.config as Record<string, unknown>,
      result.episode_length as number,
      options.verifyDigest ?? true,
    );
  }

  async reset(seed?: number): Promise<Observation> {
    this.ensureOpen();
    const params: Record<string, unknown> = { env: this.handle };
    if (seed !== undefined) {
      params.seed = seed;
    }
    const result = await this.client.request("reset", params);
    return this.decode(result.obs as Record<string, unknown>);
  }

  async step(action: Action): Promise<StepResult> {
    this.ensureOpen();
    const result = await this.client.request("step", {
      env: this.handle,
      action: {
        twist: Array.from(action.twist),
        aperture: action.aperture ?? 0,
      },
    });
    return {
      obs: this.decode(result.obs as Record<string, unknown>),
      timings: decodeTimings(result.timings as Record<string, unknown>),
    };
  }

  async close(): Promise<void> {
    if (this.isClosed) {
      return;
    }
    this.isClosed = true;
    await this.client.request("close", { env: this.handle });
  }

  private decode(record: Record<string, unknown>): Observation {
    const obs = decodeObservation(record);
    if (this.verifyDigest) {
      const local = observationDigest(obs);
      if (local !== obs.digest) {
        throw new DigestMismatchError(obs.digest, local);
      }
    }
    return obs;
  }

  private ensureOpen(): void {
    if (this.isClosed) {
      throw new BridgeError("InvalidArgumentError", `env handle ${this.handle} is closed`);
    }
  }
}

/** The scripted demonstration action for a task at one step. */
export async function scriptedAction(
  client: BridgeClient,
  task: string,
  mode: string,
  stepIndex: number,
): Promise<Action> {
  const result = await client.request("scripted_action", {
    task,
    mode,
    step_index: stepIndex,
  });
  return {
    twist: result.twist as number[],
    aperture: result.aperture as number,
  };
}

export interface VectorEnvOptions extends Omit<MakeEnvOptions, "seed"> {
  /** Per-env seeds; default seeds env i with i. */
  seeds?: number[];
}

/** Fixed-size batch of envs stepped in lockstep over one bridge. */
export class VectorEnv {
  readonly envs: EnvHandle[];

  private constructor(envs: EnvHandle[]) {
    this.envs = envs;
  }

  static async make(
    client: BridgeClient,
    task: string,
    count: number,
    options: VectorEnvOptions = {},
  ): Promise<VectorEnv> {
    if (!Number.isInteger(count) || count < 1) {
      throw new BridgeError("InvalidArgumentError", `env count must be >= 1, got ${count}`);
    }
    if (options.seeds !== undefined && options.seeds.length !== count) {
      throw new BridgeError(
        "InvalidArgumentError",
        `got ${options.seeds.length} seeds for ${count} envs`,
      );
    }
    const envs = await Promise.all(
      Array.from({ length: count }, (_, i) =>
        EnvHandle.make(client, task, {
          configJson: options.configJson,
          mode: options.mode,
          verifyDigest: options.verifyDigest,
          seed: options.seeds === undefined ? i : options.seeds[i],
        }),
      ),
    );
    return new VectorEnv(envs);
  }

  get length(): number {
    return this.envs.length;
  }

  /** Reset every env; seeds align by index when given. */
  reset(seeds?: (number | undefined)[]): Promise<Observation[]> {
    if (seeds !== undefined && seeds.length !== this.envs.length) {
      throw new BridgeError(
        "InvalidArgumentError",
        `got ${seeds.length} seeds for ${this.envs.length} envs`,
      );
    }
    return Promise.all(this.envs.map((env, i) => env.reset(seeds?.[i])));
  }

  /** Step every env with its own action, pipelined. */
  step(actions: Action[]): Promise<StepResult[]> {
    if (actions.length !== this.envs.length) {
      throw new BridgeError(
        "InvalidArgumentError",
        `got ${actions.length} actions for ${this.envs.length} envs`,
      );
    }
    return Promise.all(this.envs.map((env, i) => env.step(actions[i] as Action)));
  }

  async close(): Promise<void> {
    await Promise.all(this.envs.map((env) => env.close()));
  }
}
