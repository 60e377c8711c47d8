"""Operator entry point: assemble, record, replay, verify, inspect logs,
and run the interactive debug REPL.

Exit codes: 0 ok, 1 usage error, 2 divergence, 3 corrupt log,
4 image mismatch, 5 guest-layout error.
"""

import argparse
import json
import sys

from . import asm as asm_mod
from . import guest as guest_mod
from .counter import CounterConfig, UnusableCounter
from .debug import DebugSession, AtStartError, KERNEL_TASK_ID
from .engine import (DEFAULT_MAX_INSTRUCTIONS, EXIT_HALTED, record, replay)
from .devices import parse_stimulus
from .errors import (CorruptLog, Divergence, GuestLayoutError, ImageMismatch)
from .tracelog import DEFAULT_CHECKPOINT_INTERVAL, TraceLog

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGENCE = 2
EXIT_CORRUPT = 3
EXIT_MISMATCH = 4
EXIT_LAYOUT = 5

PROFILE_FLAGS = {"exact": "exact", "ppc": "ppc_mpc7441",
                 "x86-flaky": "x86_flaky"}


def _read_bytes(path):
    if path is None:
        return b""
    with open(path, "rb") as f:
        return f.read()


def _load_symbols(kernel_path):
    """Symbols come from the `.sym.json` sidecar the asm subcommand
    writes next to an image; absent sidecar just disables `where`."""
    try:
        with open(kernel_path + ".sym.json") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError):
        return {}, {}
    symbols = {k: int(v) for k, v in doc.get("symbols", {}).items()}
    listing = {int(k): tuple(v) for k, v in doc.get("listing", {}).items()}
    return symbols, listing


# -- subcommands --------------------------------------------------------

def cmd_asm(args):
    with open(args.source) as f:
        source = f.read()
    try:
        prog = asm_mod.assemble(source)
    except asm_mod.AsmError as exc:
        print("asm error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    with open(args.out, "wb") as f:
        f.write(prog.image)
    with open(args.out + ".sym.json", "w") as f:
        json.dump({"symbols": prog.symbols,
                   "listing": {str(k): list(v) for k, v in prog.listing.items()}},
                  f, indent=1)
    print("wrote %s (%d bytes, %d symbols)"
          % (args.out, len(prog.image), len(prog.symbols)))
    return EXIT_OK


def cmd_build_guest(args):
    try:
        g = guest_mod.sample_guest(args.sample)
    except KeyError:
        print("unknown sample %r (have: %s)"
              % (args.sample, ", ".join(sorted(guest_mod.SAMPLE_TASKS))),
              file=sys.stderr)
        return EXIT_USAGE
    with open(args.out, "wb") as f:
        f.write(g.kernel_image)
    prog = g.kernel_program
    with open(args.out + ".sym.json", "w") as f:
        json.dump({"symbols": prog.symbols,
                   "listing": {str(k): list(v) for k, v in prog.listing.items()}},
                  f, indent=1)
    print("wrote %s (%d bytes, %d tasks)"
          % (args.out, len(g.kernel_image), g.num_tasks))
    return EXIT_OK


def _interactive_stimulus():
    """Read host console lines as timed stimulus: the human-at-keyboard
    record scenario. EOF ends input."""
    import time
    t0 = time.monotonic()
    out = []
    print("interactive record: type input, ^D to finish", file=sys.stderr)
    for line in sys.stdin:
        ms = int((time.monotonic() - t0) * 1000)
        out.append((ms, line.encode()))
    return out


def cmd_record(args):
    kernel = _read_bytes(args.kernel)
    disk = _read_bytes(args.disk)
    if args.interactive:
        stimulus = _interactive_stimulus()
    elif args.stimulus:
        with open(args.stimulus) as f:
            stimulus = parse_stimulus(f.read())
    else:
        stimulus = []
    config = CounterConfig(profile=PROFILE_FLAGS[args.counter_profile],
                           seed=args.seed)
    try:
        summary = record(kernel, disk, stimulus, config, args.out,
                         max_instructions=args.max_instr,
                         checkpoint_interval=args.checkpoint_interval,
                         allow_flaky=args.allow_flaky)
    except UnusableCounter as exc:
        print("record: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    print("recorded %s: %s at icount %d, %d events, final hash %s"
          % (args.out, summary.exit_reason, summary.final_icount,
             summary.event_count, summary.final_state_hash[:16]))
    return EXIT_OK if summary.exit_reason == EXIT_HALTED else EXIT_OK


def cmd_replay(args):
    kernel = _read_bytes(args.kernel)
    disk = _read_bytes(args.disk)
    override = PROFILE_FLAGS[args.profile_override] if args.profile_override \
        else None
    try:
        summary = replay(args.log, kernel, disk, profile_override=override,
                         shadow_log_path=args.shadow_log)
    except CorruptLog as exc:
        print("replay: corrupt log: %s" % exc, file=sys.stderr)
        return EXIT_CORRUPT
    except ImageMismatch as exc:
        print("replay: %s" % exc, file=sys.stderr)
        return EXIT_MISMATCH
    except UnusableCounter as exc:
        print("replay: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    if summary.divergence is not None:
        print("replay DIVERGED: %s" % json.dumps(summary.divergence),
              file=sys.stderr)
        return EXIT_DIVERGENCE
    if not args.verify_only:
        print("replayed to icount %d, final hash %s"
              % (summary.final_icount, summary.final_state_hash[:16]))
    else:
        print("ok: %d events verified, final icount %d"
              % (summary.event_count, summary.final_icount))
    return EXIT_OK


def cmd_log_dump(args):
    try:
        log = TraceLog.read(args.log)
    except CorruptLog as exc:
        print("corrupt log: %s" % exc, file=sys.stderr)
        return EXIT_CORRUPT
    print(json.dumps(log.header.to_dict()))
    lo = args.from_seq if args.from_seq is not None else 0
    hi = args.to_seq if args.to_seq is not None else float("inf")
    for ev in log.events:
        if lo <= ev.seq <= hi:
            print(json.dumps(ev.to_dict()))
    return EXIT_OK


def cmd_verify(args):
    """Compare the event streams of two logs (header timestamps ignored)."""
    try:
        a = TraceLog.read(args.log_a)
        b = TraceLog.read(args.log_b)
    except CorruptLog as exc:
        print("corrupt log: %s" % exc, file=sys.stderr)
        return EXIT_CORRUPT
    ha, hb = dict(a.header.to_dict()), dict(b.header.to_dict())
    ha.pop("created_at"), hb.pop("created_at")
    if ha != hb:
        print("headers differ", file=sys.stderr)
        return EXIT_DIVERGENCE
    ea = [e.to_dict() for e in a.events]
    eb = [e.to_dict() for e in b.events]
    if ea != eb:
        n = next(i for i, (x, y) in enumerate(zip(ea, eb)) if x != y) \
            if any(x != y for x, y in zip(ea, eb)) else min(len(ea), len(eb))
        print("event streams differ at index %d" % n, file=sys.stderr)
        return EXIT_DIVERGENCE
    print("logs match: %d events" % len(ea))
    return EXIT_OK


# -- debug REPL ---------------------------------------------------------

REPL_HELP = """\
commands:
  tasks               list guest tasks
  regs                registers and mode
  x ADDR LEN          hex dump LEN bytes at ADDR
  b ADDR [TASK]       set breakpoint (optional task filter)
  d ID                delete breakpoint
  c                   continue
  s [TASK]            step one instruction of TASK (default: current)
  rs [TASK]           reverse-step
  goto ICOUNT         run (or seek back) to instruction count
  where               pc, nearest symbol, source line
  events A B          logged events with icount in [A, B]
  q                   quit"""


def _print_stop(stop):
    print("stopped: %s at icount %d, task %s, pc 0x%X"
          % (stop["reason"], stop["icount"],
             "kernel" if stop["task_id"] == KERNEL_TASK_ID else stop["task_id"],
             stop["pc"]))


def _repl(session):
    print("ervm debug REPL; 'help' for commands")
    req_id = 0
    while True:
        try:
            line = input("(ervm) ").strip()
        except EOFError:
            break
        if not line:
            continue
        parts = line.split()
        name, rest = parts[0], parts[1:]
        if name == "q":
            break
        if name == "help":
            print(REPL_HELP)
            continue
        req_id += 1
        cmd_map = {
            "tasks": ("tasks", {}),
            "regs": ("regs", {}),
            "c": ("continue", {}),
            "where": ("where", {}),
        }
        try:
            if name in cmd_map:
                cmd, cargs = cmd_map[name]
            elif name == "x":
                cmd, cargs = "read-mem", {"addr": rest[0], "len": rest[1]}
            elif name == "b":
                cargs = {"addr": rest[0]}
                if len(rest) > 1:
                    cargs["task"] = int(rest[1])
                cmd = "break-set"
            elif name == "d":
                cmd, cargs = "break-clear", {"id": rest[0]}
            elif name == "s":
                cmd, cargs = "step", ({"task": int(rest[0])} if rest else {})
            elif name == "rs":
                cmd, cargs = "reverse-step", ({"task": int(rest[0])} if rest
                                              else {})
            elif name == "goto":
                cmd, cargs = "run-to-icount", {"n": rest[0]}
            elif name == "events":
                cmd, cargs = "events", {"from": rest[0], "to": rest[1]}
            else:
                print("unknown command %r ('help' lists them)" % name)
                continue
        except IndexError:
            print("missing argument ('help' lists usage)")
            continue
        resp, stop = session.handle_request(
            {"id": req_id, "cmd": cmd, "args": cargs})
        if not resp["ok"]:
            print("error: %s" % resp["error"])
            if "divergence" in resp:
                print(json.dumps(resp["divergence"], indent=1))
                return EXIT_DIVERGENCE
            continue
        if cmd == "read-mem":
            data = bytes.fromhex(resp["data"]["bytes"])
            addr = resp["data"]["addr"]
            for off in range(0, len(data), 16):
                row = data[off:off + 16]
                print("%08X  %s" % (addr + off, row.hex(" ")))
        elif cmd == "tasks":
            for t in resp["data"]:
                print("task %d: %-8s pc=0x%05X%s"
                      % (t["task_id"], t["state"], t["pc"],
                         "  <- current" if t["is_current"] else ""))
        elif cmd == "regs":
            d = resp["data"]
            print("pc=0x%05X mode=%s ie=%d icount=%d"
                  % (d["pc"], d["mode"], d["ie"], d["icount"]))
            for i in range(0, 16, 4):
                print("  " + "  ".join("r%-2d=%08X" % (k, d["r"][k])
                                       for k in range(i, i + 4)))
        elif cmd == "events":
            for ev in resp["data"]:
                print(json.dumps(ev))
        elif resp["data"] is not None and stop is None:
            print(json.dumps(resp["data"]))
        if stop is not None:
            _print_stop(stop)
    return EXIT_OK


def cmd_debug(args):
    kernel = _read_bytes(args.kernel)
    disk = _read_bytes(args.disk)
    symbols, listing = _load_symbols(args.kernel)
    try:
        session = DebugSession(args.log, kernel, disk,
                               symbols=symbols, listing=listing)
    except CorruptLog as exc:
        print("debug: corrupt log: %s" % exc, file=sys.stderr)
        return EXIT_CORRUPT
    except ImageMismatch as exc:
        print("debug: %s" % exc, file=sys.stderr)
        return EXIT_MISMATCH

    from . import server as server_mod
    tcp_server = None
    if args.listen:
        host, port = args.listen.rsplit(":", 1)
        tcp_server = server_mod.serve_tcp(session, host, int(port))
        print("debug TCP listening on %s:%d" % tcp_server.address,
              file=sys.stderr)
    if args.ws:
        host, port = args.ws.rsplit(":", 1)
        print("debug WebSocket on ws://%s:%s/debug" % (host, port),
              file=sys.stderr)
        if args.no_repl:
            server_mod.serve_ws(session, host, int(port))
            return EXIT_OK
        import threading
        threading.Thread(target=server_mod.serve_ws,
                         args=(session, host, int(port)), daemon=True).start()
    if args.no_repl and tcp_server is not None:
        try:
            import time
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            return EXIT_OK
    try:
        return _repl(session)
    except GuestLayoutError as exc:
        print("debug: %s" % exc, file=sys.stderr)
        return EXIT_LAYOUT
    finally:
        if tcp_server is not None:
            tcp_server.shutdown()


# -- argument parsing ---------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="ervm",
        description="deterministic execution-replay VM and time-travel debugger")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble a source file to an image")
    p.add_argument("source")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("build-guest",
                       help="build a bundled sample guest image")
    p.add_argument("sample", help="one of: %s"
                   % ", ".join(sorted(guest_mod.SAMPLE_TASKS)))
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_build_guest)

    p = sub.add_parser("record", help="run a guest live and log all "
                       "nondeterministic inputs")
    p.add_argument("--kernel", required=True)
    p.add_argument("--disk")
    p.add_argument("--stimulus")
    p.add_argument("--counter-profile", choices=sorted(PROFILE_FLAGS),
                   default="exact")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--max-instr", type=int, default=DEFAULT_MAX_INSTRUCTIONS)
    p.add_argument("--checkpoint-interval", type=int,
                   default=DEFAULT_CHECKPOINT_INTERVAL)
    p.add_argument("--interactive", action="store_true")
    p.add_argument("--allow-flaky", action="store_true",
                   help="permit recording with the non-compensable counter "
                        "(the log will not replay)")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("replay", help="re-execute a trace and verify it")
    p.add_argument("--log", required=True)
    p.add_argument("--kernel", required=True)
    p.add_argument("--disk")
    p.add_argument("--verify-only", action="store_true")
    p.add_argument("--profile-override", choices=sorted(PROFILE_FLAGS))
    p.add_argument("--shadow-log", help="write the events actually observed "
                                        "during this replay to a file")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("log", help="inspect trace logs")
    logsub = p.add_subparsers(dest="log_command", required=True)
    pd = logsub.add_parser("dump", help="print header and events as JSON lines")
    pd.add_argument("log")
    pd.add_argument("--from", dest="from_seq", type=int)
    pd.add_argument("--to", dest="to_seq", type=int)
    pd.set_defaults(func=cmd_log_dump)

    p = sub.add_parser("verify", help="compare two logs event by event")
    p.add_argument("log_a")
    p.add_argument("log_b")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("debug", help="time-travel debugger over a trace")
    p.add_argument("--log", required=True)
    p.add_argument("--kernel", required=True)
    p.add_argument("--disk")
    p.add_argument("--listen", metavar="HOST:PORT",
                   help="serve the newline-JSON protocol over TCP")
    p.add_argument("--ws", metavar="HOST:PORT",
                   help="serve the protocol over a WebSocket")
    p.add_argument("--no-repl", action="store_true",
                   help="serve transports only, skip the interactive REPL")
    p.set_defaults(func=cmd_debug)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except Divergence as exc:
        print("divergence: %s" % json.dumps(exc.report()), file=sys.stderr)
        return EXIT_DIVERGENCE
    except CorruptLog as exc:
        print("corrupt log: %s" % exc, file=sys.stderr)
        return EXIT_CORRUPT
    except ImageMismatch as exc:
        print("image mismatch: %s" % exc, file=sys.stderr)
        return EXIT_MISMATCH
    except GuestLayoutError as exc:
        print("guest layout error: %s" % exc, file=sys.stderr)
        return EXIT_LAYOUT


if __name__ == "__main__":
    sys.exit(main())
