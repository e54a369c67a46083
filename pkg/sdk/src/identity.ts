/** Identity module: echoes every capture input to the same-topic output.
 * Used by the cross-language loopback conformance test. */

import { runModule } from "./frame";
import { Payload } from "./wire";

export function makeHandler(_params: Record<string, any>) {
  return (port: string, payload: Payload, _tUs: bigint): Array<[string, Payload]> => {
    return [["out", payload]];
  };
}

if (require.main === module) {
  runModule(makeHandler).catch((err) => {
    process.stderr.write(`${err}\n`);
    process.exit(1);
  });
}
