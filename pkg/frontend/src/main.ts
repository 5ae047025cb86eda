import { ApiClient } from "./api.js";
import { loadConfig } from "./config.js";
import { KioskApp } from "./app.js";
import { SessionStore } from "./state.js";

async function boot(): Promise<void> {
  const config = await loadConfig();
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const store = new SessionStore(window.sessionStorage, config.inactivityTimeoutMs);
  const app = new KioskApp({
    root,
    api: new ApiClient(config.serviceUrl),
    store,
    config,
  });
  store.subscribe((state) => {
    // inactivity reset lands here: return to the picker screen
    if (state.selectedSymptoms.length === 0 && state.lastResponse === null) {
      app.start();
    }
  });
  app.start();
}

void boot();
