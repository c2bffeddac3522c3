/**
 * Wire decoding and the observation digest.
 *
 * Large arrays cross the bridge as base64 little-endian float64,
 * row-major; small vectors cross as plain JSON numbers, which round
 * trip bit-exactly through shortest-representation decimal. Each
 * decode makes exactly one copy (base64 straight into an owned
 * ArrayBuffer); nothing aliases simulator memory across the process
 * boundary.
 */

import { createHash } from "node:crypto";

/** Dense row-major float64 array with an explicit shape. */
export interface NdArray {
  shape: number[];
  data: Float64Array;
}

export interface WireArray {
  shape: number[];
  data: string;
}

export interface LoadState {
  contactCenter: [number, number];
  maxIndentation: number;
  shear: [number, number];
  twist: number;
  inContact: boolean;
}

export interface Observation {
  stepIndex: number;
  markers: NdArray[];
  loadStates: LoadState[];
  rgb: (NdArray | null)[];
  heightmap: (NdArray | null)[];
  /** One 7-vector per sensor: tx, ty, tz, qx, qy, qz, qw. */
  casePoses: Float64Array[];
  objectCentroids: NdArray;
  /** One 7-vector per rigid object, null for soft bodies. */
  objectPoses: (Float64Array | null)[];
  /** Digest computed by the simulator before serialization. */
  digest: string;
}

export interface StageTimings {
  physicsMs: number;
  heightmapMs: number;
  opticalMs: number;
  markerMs: number;
}

// The wire format is explicitly little-endian; Float64Array uses the
// platform byte order, so refuse the (hypothetical) big-endian host.
const F64_PROBE = new Uint8Array(Float64Array.of(1).buffer);
if (F64_PROBE[7] !== 0x3f) {
  throw new Error("tacsim bindings require a little-endian host");
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function decodeArray(wire: WireArray): NdArray {
  const count = elementCount(wire.shape);
  const data = new Float64Array(count);
  const payload = Buffer.byteLength(wire.data, "base64");
  if (payload !== data.byteLength) {
    throw new Error(
      `array payload is ${payload} bytes, shape (${wire.shape}) needs ${data.byteLength}`,
    );
  }
  Buffer.from(data.buffer, 0, data.byteLength).write(wire.data, 0, "base64");
  return { shape: [...wire.shape], data };
}

function bytesOf(data: Float64Array): Buffer {
  return Buffer.from(data.buffer, data.byteOffset, data.byteLength);
}

/** Python tuple repr of a shape: "(480, 640, 3)", "(7,)". */
export function shapeString(shape: number[]): string {
  if (shape.length === 1) {
    return `(${shape[0]},)`;
  }
  return `(${shape.join(", ")})`;
}

const NONE_MARK = Buffer.from([0x00, 0x6e, 0x6f, 0x6e, 0x65]); // b"\x00none"

function loadStateVector(ls: LoadState): Float64Array {
  return Float64Array.of(
    ls.contactCenter[0],
    ls.contactCenter[1],
    ls.maxIndentation,
    ls.shear[0],
    ls.shear[1],
    ls.twist,
    ls.inContact ? 1 : 0,
  );
}

/**
 * SHA-256 over every observation field, byte-for-byte the recipe the
 * simulator applies before serialization. Matching digests prove the
 * boundary crossing was lossless.
 */
export function observationDigest(obs: Observation): string {
  const h = createHash("sha256");
  h.update(String(obs.stepIndex));

  const arr = (shape: number[], data: Float64Array | null): void => {
    if (data === null) {
      h.update(NONE_MARK);
      return;
    }
    h.update(shapeString(shape));
    h.update("float64");
    h.update(bytesOf(data));
  };
  const nd = (a: NdArray | null): void => {
    arr(a === null ? [] : a.shape, a === null ? null : a.data);
  };

  for (const m of obs.markers) nd(m);
  for (const ls of obs.loadStates) {
    const v = loadStateVector(ls);
    arr([v.length], v);
  }
  for (const r of obs.rgb) nd(r);
  for (const hm of obs.heightmap) nd(hm);
  for (const p of obs.casePoses) arr([p.length], p);
  nd(obs.objectCentroids);
  for (const p of obs.objectPoses) arr(p === null ? [] : [p.length], p);
  return h.digest("hex");
}

function asTuple2(values: number[], what: string): [number, number] {
  if (values.length !== 2) {
    throw new Error(`${what} must have 2 entries, got ${values.length}`);
  }
  return [values[0] as number, values[1] as number];
}

function decodeMatrix(rows: number[][], cols: number): NdArray {
  const data = new Float64Array(rows.length * cols);
  rows.forEach((row, i) => data.set(row, i * cols));
  return { shape: [rows.length, cols], data };
}

export function decodeObservation(record: Record<string, unknown>): Observation {
  const wires = (field: string) => record[field] as (WireArray | null)[];
  const loadStates = (record.load_states as Record<string, unknown>[]).map(
    (ls): LoadState => ({
      contactCenter: asTuple2(ls.contact_center as number[], "contact_center"),
      maxIndentation: ls.max_indentation as number,
      shear: asTuple2(ls.shear as number[], "shear"),
      twist: ls.twist as number,
      inContact: ls.in_contact as boolean,
    }),
  );
  return {
    stepIndex: record.step_index as number,
    markers: wires("markers").map((w) => decodeArray(w as WireArray)),
    loadStates,
    rgb: wires("rgb").map((w) => (w === null ? null : decodeArray(w))),
    heightmap: wires("heightmap").map((w) => (w === null ? null : decodeArray(w))),
    casePoses: (record.case_poses as number[][]).map((p) => Float64Array.from(p)),
    objectCentroids: decodeMatrix(record.object_centroids as number[][], 3),
    objectPoses: (record.object_poses as (number[] | null)[]).map((p) =>
      p === null ? null : Float64Array.from(p),
    ),
    digest: record.digest as string,
  };
}

export function decodeTimings(record: Record<string, unknown>): StageTimings {
  return {
    physicsMs: record.physics_ms as number,
    heightmapMs: record.heightmap_ms as number,
    opticalMs: record.optical_ms as number,
    markerMs: record.marker_ms as number,
  };
}
