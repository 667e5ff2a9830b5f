#!/usr/bin/env node
/**
 * CLI: lesionkit-export export --images "<glob>" --prompt "<text>" --out <dir>
 * Exit codes mirror the analysis package: 0 success, 2 partial failures,
 * 1 fatal.
 */

import { parseArgs } from "node:util";

import { DEFAULT_PROMPT, runExport } from "./exporter.js";

function usage(): void {
  console.log(
    "usage: lesionkit-export export --images <glob> [--images <glob> ...]\n" +
    "           --out <dir> [--prompt <text>] [--model analytic] [--device cpu]\n" +
    "           [--dim 16] [--topk 3] [--descriptions <file>]");
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  if (command !== "export") {
    usage();
    return command === "--help" || command === "-h" ? 0 : 1;
  }
  let parsed;
  try {
    parsed = parseArgs({
      args: rest,
      options: {
        images: { type: "string", multiple: true },
        prompt: { type: "string", default: DEFAULT_PROMPT },
        out: { type: "string" },
        model: { type: "string", default: "analytic" },
        device: { type: "string", default: "cpu" },
        dim: { type: "string", default: "16" },
        topk: { type: "string", default: "3" },
        descriptions: { type: "string" },
      },
    });
  } catch (err) {
    console.error(String(err));
    usage();
    return 1;
  }
  const { values } = parsed;
  if (!values.images?.length || !values.out) {
    usage();
    return 1;
  }
  try {
    const summary = await runExport({
      images: values.images,
      prompt: values.prompt!,
      outDir: values.out,
      model: values.model!,
      device: values.device!,
      embeddingDim: Number(values.dim),
      topK: Number(values.topk),
      descriptionsFile: values.descriptions,
    });
    console.log(`exported ${summary.exported.length} bundle(s) to ${values.out}`);
    for (const err of summary.errors) {
      console.error(`error: ${err.image}: ${err.error}`);
    }
    if (summary.exported.length === 0) return summary.errors.length ? 1 : 2;
    return summary.errors.length ? 2 : 0;
  } catch (err) {
    console.error(`fatal: ${err instanceof Error ? err.message : String(err)}`);
    return 1;
  }
}

const isDirectRun = process.argv[1] !== undefined
  && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (isDirectRun) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
