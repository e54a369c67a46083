"use strict";
/** Identity module: echoes every capture input to the same-topic output.
 * Used by the cross-language loopback conformance test. */
Object.defineProperty(exports, "__esModule", { value: true });
exports.makeHandler = makeHandler;
const frame_1 = require("./frame");
function makeHandler(_params) {
    return (port, payload, _tUs) => {
        return [["out", payload]];
    };
}
if (require.main === module) {
    (0, frame_1.runModule)(makeHandler).catch((err) => {
        process.stderr.write(`${err}\n`);
        process.exit(1);
    });
}
