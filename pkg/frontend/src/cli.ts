#!/usr/bin/env node
/** `dtoffload-plots render --family <id> --in <dir> --out <file>` */

import { writeFileSync } from "node:fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { FAMILIES, Family, render } from "./figures.js";
import { SchemaError } from "./csv.js";

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .command("render", "render one figure family from harness CSVs", (y) =>
      y.option("family", { type: "string", demandOption: true, choices: [...FAMILIES] })
        .option("in", { type: "string", demandOption: true, describe: "harness out-dir" })
        .option("out", { type: "string", demandOption: true, describe: "output SVG path" }))
    .demandCommand(1)
    .strict()
    .fail((msg, err) => { throw err ?? new Error(msg); })
    .parse();

  const { svg, warnings } = render(args.family as Family, args.in as string);
  for (const w of warnings) console.warn(`warning: ${w}`);
  writeFileSync(args.out as string, svg, "utf-8");
  console.log(`wrote ${args.out}`);
  return 0;
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js");
if (invokedDirectly) {
  main(hideBin(process.argv))
    .then((code) => process.exit(code))
    .catch((err) => {
      console.error(err instanceof SchemaError ? `schema error: ${err.message}` : String(err));
      process.exit(err instanceof SchemaError ? 2 : 1);
    });
}
