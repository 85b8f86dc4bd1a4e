export {
  buildAddmSchedule,
  datasetLoglik,
  fit,
  fptd,
  mcmcSample,
  npp,
  runSubcommand,
  CoreError,
} from "./client.js";
export type {
  AddmParams,
  FitOptions,
  FitResultJson,
  FixationSegment,
  LoglikResultJson,
  McmcOptions,
  McmcResultJson,
  ScheduleJson,
  Trial,
} from "./client.js";
export { ScheduleHandle, openHandles } from "./handles.js";
