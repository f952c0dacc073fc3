/**
 * Entry point. Configuration comes from URL query parameters:
 *   ?server=http://host:port&session=SESSION_ID[&left=f&right=j]
 */

import { SessionApi } from "./api.js";
import { DomKeySource, DomView } from "./dom.js";
import { runSession } from "./session.js";
import { DEFAULT_KEYS, TrialRunner } from "./trialMachine.js";

function requireParam(params: URLSearchParams, name: string): string {
  const value = params.get(name);
  if (!value) {
    throw new Error(`missing required query parameter '${name}'`);
  }
  return value;
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const server = requireParam(params, "server");
  const sessionId = requireParam(params, "session");
  const bindings = {
    left: (params.get("left") ?? DEFAULT_KEYS.left).toLowerCase(),
    right: (params.get("right") ?? DEFAULT_KEYS.right).toLowerCase(),
  };
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  const api = new SessionApi(server);
  const keySource = new DomKeySource();
  const view = new DomView(root, bindings, keySource);
  const runner = new TrialRunner(api, view, keySource, undefined, bindings);
  await runSession(api, sessionId, runner, view);
}

start().catch((err) => {
  const root = document.getElementById("app");
  if (root) {
    root.textContent = `Could not start the session: ${err}`;
  }
});
