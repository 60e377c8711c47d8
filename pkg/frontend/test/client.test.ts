import { describe, expect, it } from "vitest";

import { DebugClient, ProtocolError } from "../src/client.js";
import { MockServer, WrongVersionServer, refusedSocket } from "./mockServer.js";

function connected(): Promise<{ client: DebugClient; server: MockServer }> {
  const server = new MockServer();
  const client = new DebugClient();
  return client
    .connect("ws://mock/debug", () => server.socket())
    .then(() => ({ client, server }));
}

describe("DebugClient connection", () => {
  it("resolves with the hello handshake", async () => {
    const server = new MockServer();
    const client = new DebugClient();
    const hello = await client.connect("ws://mock/debug", () => server.socket());
    expect(hello.protocol_version).toBe(1);
    expect(hello.final_icount).toBe(10_000);
    expect(client.hello).toEqual(hello);
  });

  it("rejects on refused connection", async () => {
    const client = new DebugClient();
    await expect(
      client.connect("ws://nowhere/debug", refusedSocket),
    ).rejects.toThrow(/cannot connect|connection closed/);
  });

  it("rejects on protocol version mismatch", async () => {
    const server = new WrongVersionServer();
    const client = new DebugClient();
    await expect(
      client.connect("ws://mock/debug", () => server.socket()),
    ).rejects.toThrow(/version mismatch/);
  });
});

describe("request correlation", () => {
  it("matches responses to requests by id", async () => {
    const { client } = await connected();
    const [tasks, regs] = await Promise.all([client.tasks(), client.regs()]);
    expect(tasks).toHaveLength(2);
    expect(regs.r).toHaveLength(16);
    expect(regs.icount).toBe(0);
  });

  it("rejects the matching promise on an error response", async () => {
    const { client } = await connected();
    await expect(client.request("write-mem", { addr: 0 })).rejects.toThrow(
      "read-only replay",
    );
    // the connection stays usable afterwards
    expect((await client.tasks()).length).toBe(2);
  });

  it("rejects unknown commands without disturbing others", async () => {
    const { client } = await connected();
    await expect(
      client.request("frobnicate" as never),
    ).rejects.toThrow(/unknown cmd/);
  });
});

describe("stop events", () => {
  it("fans out unsolicited stop events to listeners", async () => {
    const { client } = await connected();
    const stops: string[] = [];
    client.onStop((s) => stops.push(s.reason));
    await client.step();
    await client.runToIcount(500);
    expect(stops).toEqual(["step", "icount"]);
  });

  it("continue runs to halt when no breakpoints are set", async () => {
    const { client } = await connected();
    let last: number | null = null;
    client.onStop((s) => {
      last = s.icount;
    });
    await client.continue_();
    expect(last).toBe(10_000);
  });

  it("continue stops at a breakpoint", async () => {
    const { client, server } = await connected();
    const addr = server.pcAt(7); // pc the model reaches at icount 7
    await client.setBreakpoint(addr);
    const stop = await new Promise<{ reason: string; icount: number }>(
      (resolve) => {
        client.onStop((s) => resolve(s));
        void client.continue_();
      },
    );
    expect(stop.reason).toBe("breakpoint");
    expect(server.pcAt(stop.icount)).toBe(addr);
  });

  it("reverse-step moves the cursor back by one", async () => {
    const { client } = await connected();
    const icounts: number[] = [];
    client.onStop((s) => icounts.push(s.icount));
    await client.runToIcount(100);
    await client.reverseStep();
    expect(icounts).toEqual([100, 99]);
  });

  it("reverse-step at the start surfaces the server error", async () => {
    const { client } = await connected();
    await expect(client.reverseStep()).rejects.toThrow(/AtStartError/);
  });
});

describe("breakpoint bookkeeping", () => {
  it("duplicate set returns the same id; clear removes it", async () => {
    const { client, server } = await connected();
    const a = await client.setBreakpoint(0x10010);
    const b = await client.setBreakpoint(0x10010);
    expect(a.id).toBe(b.id);
    await client.clearBreakpoint(a.id);
    expect(server.breakpoints).toHaveLength(0);
    await expect(client.clearBreakpoint(a.id)).rejects.toThrow(
      /no such breakpoint/,
    );
  });
});

describe("detach", () => {
  it("tells the server and closes the socket", async () => {
    const { client, server } = await connected();
    await client.detach();
    expect(server.detached).toBe(true);
  });
});

describe("ProtocolError", () => {
  it("carries divergence payloads when present", () => {
    const err = new ProtocolError("divergence", { at_seq: 5 });
    expect(err.divergence).toEqual({ at_seq: 5 });
  });
});
