export { readCsv, requireColumns, column, SchemaError } from "./csv";
export { readFields, channelSlice } from "./fields";
export { linearFit, logLogSlope } from "./fit";
export {
  KINDS,
  renderConvergence,
  renderHeatmapTriptych,
  renderResidual,
  renderRollout,
  renderTheorem,
  theoremSlopes,
} from "./kinds";
export { main } from "./cli";
