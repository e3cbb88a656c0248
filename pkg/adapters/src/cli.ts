/** Export subcommands, one per interchange stream, plus a whole-world generator.
 *
 * Each export command reads a raw tool dump (--from) or generates synthetic
 * data (--synth, honoring --seed and --limit). Invalid source records are
 * reported on stderr as JSON lines and the exit code is non-zero; valid
 * records are still written so partial dumps can be inspected.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import {
  convertCamDump,
  convertClassifierDump,
  convertDetectionDump,
  convertTraceLog,
  Converted,
} from "./convert.js";
import { stableStringify, toLines } from "./ndjson.js";
import { buildWorld } from "./synth.js";
import { AdapterManifest, RecordError } from "./types.js";

export const MANIFESTS: Record<string, AdapterManifest> = {
  traces: {
    tool: "training-trace-hook",
    version: "0.1.0",
    command_template: "annorefine-adapters export-traces --from {log} --out {out}",
    output_schema_version: 1,
  },
  detections: {
    tool: "six-view-inference-driver",
    version: "0.1.0",
    command_template: "annorefine-adapters export-detections --from {dump} --out {out}",
    output_schema_version: 1,
  },
  verdicts: {
    tool: "crop-classifier",
    version: "0.1.0",
    command_template: "annorefine-adapters export-verdicts --from {dump} --out {out}",
    output_schema_version: 1,
  },
  cams: {
    tool: "activation-map-extractor",
    version: "0.1.0",
    command_template: "annorefine-adapters export-cams --from {dump} --out {out}",
    output_schema_version: 1,
  },
};

interface Args {
  from?: string;
  out?: string;
  synth: boolean;
  seed: number;
  limit: number;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { synth: false, seed: 0, limit: 4 };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    if (flag === "--synth") args.synth = true;
    else if (flag === "--from") args.from = argv[++i];
    else if (flag === "--out") args.out = argv[++i];
    else if (flag === "--seed") args.seed = Number(argv[++i]);
    else if (flag === "--limit") args.limit = Number(argv[++i]);
    else throw new Error(`unknown flag ${flag}`);
  }
  if (!Number.isInteger(args.seed)) throw new Error("--seed must be an integer");
  if (!Number.isInteger(args.limit) || args.limit < 1) throw new Error("--limit must be >= 1");
  return args;
}

function reportErrors(errors: RecordError[]): void {
  for (const err of errors) {
    process.stderr.write(stableStringify({ error: "RecordError", ...err }) + "\n");
  }
}

function writeOut(outPath: string, data: string): void {
  fs.mkdirSync(path.dirname(path.resolve(outPath)), { recursive: true });
  fs.writeFileSync(outPath, data);
  process.stdout.write(`wrote ${outPath}\n`);
}

function loadJson(fromPath: string): unknown {
  if (!fs.existsSync(fromPath)) throw new Error(`missing input file: ${fromPath}`);
  return JSON.parse(fs.readFileSync(fromPath, "utf-8"));
}

function finish(out: string, converted: Converted<unknown>): number {
  reportErrors(converted.errors);
  writeOut(out, toLines(converted.records));
  return converted.errors.length > 0 ? 1 : 0;
}

type WorldKey = "traces" | "detections" | "verdicts" | "cams" | "oracle";

function exportCommand(kind: WorldKey, args: Args): number {
  if (!args.out) throw new Error("--out is required");
  if (args.synth) {
    const world = buildWorld(args.seed, args.limit);
    writeOut(args.out, toLines(world[kind] as unknown[]));
    return 0;
  }
  if (!args.from) throw new Error(`--from or --synth is required for export-${kind}`);
  const raw = loadJson(args.from);
  switch (kind) {
    case "traces":
      return finish(args.out, convertTraceLog(raw as never));
    case "detections":
      return finish(args.out, convertDetectionDump(raw as never));
    case "verdicts":
      return finish(args.out, convertClassifierDump(raw as never));
    case "cams":
      return finish(args.out, convertCamDump(raw as never));
    case "oracle":
      throw new Error("oracle labels are human-made; only --synth mode is supported");
  }
}

function synthWorldCommand(args: Args): number {
  if (!args.out) throw new Error("--out directory is required");
  const world = buildWorld(args.seed, args.limit);
  fs.mkdirSync(args.out, { recursive: true });
  const files: Record<string, string> = {
    "annotations.json": stableStringify(world.annotations) + "\n",
    "traces.ndjson": toLines(world.traces),
    "detections.ndjson": toLines(world.detections),
    // identity-view detections double as plain predictions in original coordinates
    "predictions.ndjson": toLines(world.detections.filter((d) => d.view === "identity")),
    "verdicts.ndjson": toLines(world.verdicts),
    "cams.ndjson": toLines(world.cams),
    "oracle.ndjson": toLines(world.oracle),
    "manifest.json": stableStringify({ seed: args.seed, images: args.limit, adapters: MANIFESTS }) + "\n",
  };
  for (const [name, data] of Object.entries(files)) {
    writeOut(path.join(args.out, name), data);
  }
  return 0;
}

const USAGE = `usage: annorefine-adapters <command> [--from FILE | --synth] [--seed N] [--limit N] --out PATH
commands:
  export-traces      training log        -> traces.ndjson
  export-detections  six-view dump       -> detections.ndjson
  export-verdicts    classifier dump     -> verdicts.ndjson
  export-cams        activation maps     -> cams.ndjson (grids capped at 64x64)
  export-oracle      (synthetic only)    -> oracle.ndjson
  synth-world        consistent synthetic dataset -> directory of all files
`;

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (!command || command === "--help" || command === "-h") {
    process.stdout.write(USAGE);
    return command ? 0 : 2;
  }
  try {
    const args = parseArgs(rest);
    switch (command) {
      case "export-traces":
        return exportCommand("traces", args);
      case "export-detections":
        return exportCommand("detections", args);
      case "export-verdicts":
        return exportCommand("verdicts", args);
      case "export-cams":
        return exportCommand("cams", args);
      case "export-oracle":
        return exportCommand("oracle", args);
      case "synth-world":
        return synthWorldCommand(args);
      default:
        process.stderr.write(`unknown command ${command}\n${USAGE}`);
        return 2;
    }
  } catch (err) {
    process.stderr.write(stableStringify({ error: "AdapterError", message: String(err) }) + "\n");
    return 2;
  }
}

