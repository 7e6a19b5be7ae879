import { App } from "./app.js";
import { ApiClient } from "./client.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}
const app = new App(root, new ApiClient(""));
void app.init();
