/**
 * Codec units: shape formatting, base64 decode, and a glass-box pin of
 * the digest recipe against the simulator computing the same bytes.
 */

import { execFileSync } from "node:child_process";
import { describe, expect, it } from "vitest";
import {
  decodeArray,
  observationDigest,
  shapeString,
  type Observation,
} from "../src/codec.js";

describe("shape strings", () => {
  it("matches tuple formatting", () => {
    expect(shapeString([7])).toBe("(7,)");
    expect(shapeString([10, 10, 2])).toBe("(10, 10, 2)");
    expect(shapeString([480, 640])).toBe("(480, 640)");
    expect(shapeString([0, 3])).toBe("(0, 3)");
  });
});

describe("base64 decode", () => {
  it("round trips float64 values exactly", () => {
    const values = Float64Array.of(0, -1.5, 1e-300, Math.PI, -0, 2 ** 53);
    const b64 = Buffer.from(values.buffer).toString("base64");
    const nd = decodeArray({ shape: [2, 3], data: b64 });
    expect(nd.shape).toEqual([2, 3]);
    expect(Buffer.from(nd.data.buffer)).toEqual(Buffer.from(values.buffer)); // bitwise
  });

  it("rejects payloads of the wrong size", () => {
    const b64 = Buffer.alloc(8).toString("base64");
    expect(() => decodeArray({ shape: [2], data: b64 })).toThrow(/needs 16/);
    expect(() => decodeArray({ shape: [1, 1], data: Buffer.alloc(24).toString("base64") })).toThrow(
      /needs 8/,
    );
  });
});

// One marker grid, one load state, no rgb, one height map, one case
// pose, two centroids, one missing and one present object pose. Values
// exercise sign, negative zero, subnormal range, and exact integers.
const MARKER = [0.125, -3.25, 1e-300, 0.30000000000000004, -0, 7, 2 ** 53, -1e22];
const HEIGHT = [0.004, 0.0035, 0.004, 0.004, 0.0041, 0.0039];
const POSE = [0.01, -0.02, 0.03, 0, 0, 0.7071067811865476, 0.7071067811865476];
const CENTROIDS = [
  [0.1, 0.2, 0.3],
  [-0.1, -0.2, -0.3],
];
const LOAD = {
  contactCenter: [0.001, -0.002] as [number, number],
  maxIndentation: 0.0005,
  shear: [3e-5, -4e-5] as [number, number],
  twist: 0.02,
  inContact: true,
};

function pyFloat(v: number): string {
  return Object.is(v, -0) ? "-0.0" : String(v);
}

function pyList(values: number[]): string {
  return `[${values.map(pyFloat).join(", ")}]`;
}

describe("digest recipe", () => {
  const obs: Observation = {
    stepIndex: 4,
    markers: [{ shape: [2, 2, 2], data: Float64Array.from(MARKER) }],
    loadStates: [LOAD],
    rgb: [null],
    heightmap: [{ shape: [2, 3], data: Float64Array.from(HEIGHT) }],
    casePoses: [Float64Array.from(POSE)],
    objectCentroids: { shape: [2, 3], data: Float64Array.from(CENTROIDS.flat()) },
    objectPoses: [null, Float64Array.from(POSE)],
    digest: "",
  };

  it("hashes field order, shapes, dtype, and bytes like the simulator", () => {
    const script = [
      "import types",
      "import numpy as np",
      "from tacsim import envs as ev",
      "load = types.SimpleNamespace(",
      `    contact_center=np.array(${pyList(LOAD.contactCenter)}),`,
      `    max_indentation=${pyFloat(LOAD.maxIndentation)},`,
      `    shear=np.array(${pyList(LOAD.shear)}),`,
      `    twist=${pyFloat(LOAD.twist)},`,
      "    in_contact=True,",
      ")",
      "pose = types.SimpleNamespace(",
      `    as_array=lambda: np.array(${pyList(POSE)}),`,
      ")",
      "obs = types.SimpleNamespace(",
      "    step_index=4,",
      `    markers=(np.array(${pyList(MARKER)}).reshape(2, 2, 2),),`,
      "    load_states=(load,),",
      "    rgb=(None,),",
      `    heightmap=(np.array(${pyList(HEIGHT)}).reshape(2, 3),),`,
      "    case_poses=(pose,),",
      `    object_centroids=np.array([${CENTROIDS.map(pyList).join(", ")}]),`,
      "    object_poses=(None, pose),",
      ")",
      "print(ev.observation_digest(obs))",
    ].join("\n");
    const fromSimulator = execFileSync("python3", ["-c", script], { encoding: "utf8" }).trim();
    expect(observationDigest(obs)).toBe(fromSimulator);
  });

  it("changes when any single field changes", () => {
    const base = observationDigest(obs);
    const bumped: Observation = {
      ...obs,
      loadStates: [{ ...LOAD, twist: LOAD.twist + 1e-16 }],
    };
    expect(observationDigest(bumped)).not.toBe(base);
    const reshaped: Observation = {
      ...obs,
      markers: [{ shape: [2, 4], data: Float64Array.from(MARKER) }],
    };
    expect(observationDigest(reshaped)).not.toBe(base);
  });
});
