import { GatewayClient } from "./api.js";
import { createApp } from "./app.js";

// Served by the gateway itself, so all API calls are same-origin.
document.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const app = createApp({ root, client: new GatewayClient("") });
  void app.start();
});
