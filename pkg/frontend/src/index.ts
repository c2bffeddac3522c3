export { BridgeClient, BridgeError, type BridgeOptions } from "./client.js";
export {
  decodeArray,
  decodeObservation,
  decodeTimings,
  observationDigest,
  shapeString,
  type LoadState,
  type NdArray,
  type Observation,
  type StageTimings,
  type WireArray,
} from "./codec.js";
export {
  DigestMismatchError,
  EnvHandle,
  MODE_RIGID,
  MODE_SOFT,
  VectorEnv,
  scriptedAction,
  type Action,
  type MakeEnvOptions,
  type StepResult,
  type VectorEnvOptions,
} from "./env.js";
