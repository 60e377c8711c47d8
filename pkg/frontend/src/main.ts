/** Browser entry point: connect to the debug server named in the query
 * string (default localhost) and hand control to the app. */

import { DebuggerApp, elementsFromDocument } from "./app.js";
import { SocketLike } from "./client.js";

const params = new URLSearchParams(window.location.search);
const url = params.get("ws") ?? "ws://127.0.0.1:8765/debug";

const app = new DebuggerApp(elementsFromDocument(document));
// the DOM WebSocket satisfies SocketLike at runtime; its handler types
// are wider (full MessageEvent) so a cast bridges the declarations
void app.start(url, (u) => new WebSocket(u) as unknown as SocketLike);
