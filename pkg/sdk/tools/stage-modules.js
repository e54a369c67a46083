// Copy the compiled SDK into each shipped module directory so a staged
// module copy is self-contained (the deployment copies the whole dir).
const fs = require("node:fs");
const path = require("node:path");

const build = path.join(__dirname, "..", "build", "src");
for (const name of ["visualizer", "identity"]) {
  const lib = path.join(__dirname, "..", "modules", name, "lib");
  fs.rmSync(lib, { recursive: true, force: true });
  fs.mkdirSync(lib, { recursive: true });
  for (const file of fs.readdirSync(build)) {
    fs.copyFileSync(path.join(build, file), path.join(lib, file));
  }
  console.log(`staged ${name}`);
}
