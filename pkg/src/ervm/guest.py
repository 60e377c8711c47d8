"""Everything that runs inside the VM: the guest kernel, sample task
programs, and the image builder.

The kernel is shipped as assembly source and assembled at build time, so
the whole guest stays inspectable. Fixed memory map:

    0x0000_0000  boot jump
    0x0000_0100  trap vector (IVEC)
    0x0000_1000  task table (see ABI constants below)
    0x0000_2000  shared scratch page (racey's counter lives at 0x2000)
    0x0000_3000  kernel globals + console ring buffer
    0x0000_4000  kernel code
    0x0001_0000  task 0 code/stack region, 0x4000 bytes per task, 8 max

Task ABI: syscall number in r15, argument/result in r1, via ECALL.
0 yield, 1 putchar, 2 getchar (blocks), 3 gettime, 4 exit.
"""

from dataclasses import dataclass

from .asm import assemble, AsmError

# -- guest ABI (the debugger parses the task table by these offsets) -----

NUM_TASKS_ADDR = 0x0000_1000
CURRENT_ADDR = 0x0000_1004
TASK_TABLE_ADDR = 0x0000_1008
TASK_DESC_WORDS = 18            # state, saved_pc, saved r0..r15
TASK_DESC_STRIDE = TASK_DESC_WORDS * 4
MAX_TASKS = 8

TASK_STATE_READY = 0
TASK_STATE_RUNNING = 1
TASK_STATE_BLOCKED = 2
TASK_STATE_EXITED = 3
TASK_STATE_NAMES = {0: "ready", 1: "running", 2: "blocked", 3: "exited"}

TASK_REGION_BASE = 0x0001_0000
TASK_REGION_SIZE = 0x4000
KERNEL_LIMIT = TASK_REGION_BASE
CURRENT_NONE = 0xFFFF_FFFF      # CURRENT while the kernel idles

SHARED_COUNTER_ADDR = 0x0000_2000  # racey's unsynchronized shared word

SYS_YIELD = 0
SYS_PUTCHAR = 1
SYS_GETCHAR = 2
SYS_GETTIME = 3
SYS_EXIT = 4


def abi_header_text():
    """Assembly-style constants header for guest programs and docs."""
    lines = ["# generated guest ABI constants -- do not edit"]
    for name in ("NUM_TASKS_ADDR", "CURRENT_ADDR", "TASK_TABLE_ADDR",
                 "TASK_DESC_STRIDE", "MAX_TASKS", "TASK_REGION_BASE",
                 "TASK_REGION_SIZE", "SHARED_COUNTER_ADDR", "CURRENT_NONE",
                 "SYS_YIELD", "SYS_PUTCHAR", "SYS_GETCHAR", "SYS_GETTIME",
                 "SYS_EXIT"):
        lines.append("%s = 0x%X" % (name, globals()[name]))
    return "\n".join(lines) + "\n"


# -- the kernel ---------------------------------------------------------
#
# Register discipline: the trap handler stashes r1-r3 in scratch words,
# saves the full user context into CURRENT's descriptor, and from then on
# owns every register. Subroutine links: descof uses r12, wake_blocked
# uses r14. MARK is dropped on every trap entry and raised just before
# every ERET, so marked-only counting sees exactly user-task instructions.

KERNEL_SOURCE = """
.org 0x0
    JAL r0, boot

.org 0x100
    JAL r0, trap_entry

.org 0x4000
boot:
    ADDI r1, r0, 0x100
    CSRW IVEC, r1
    LD r1, r0, 0x1000          # NUM_TASKS
    BEQ r1, r0, kernel_halt    # nothing to run
    ADDI r1, r0, -1
    ST r1, r0, 0x1004          # CURRENT = none
    JAL r0, schedule

kernel_halt:
    HALT

# ---- trap entry: save context unless we were idling
trap_entry:
    CSRW MARK, r0
    ST r1, r0, 0x3000
    ST r2, r0, 0x3004
    ST r3, r0, 0x3008
    LD r1, r0, 0x300C          # in_idle?
    BEQ r1, r0, save_ctx
    ST r0, r0, 0x300C
    JAL r0, dispatch
save_ctx:
    LD r1, r0, 0x1004          # CURRENT
    ADDI r3, r0, 6
    SHL r2, r1, r3
    ADDI r3, r0, 3
    SHL r3, r1, r3
    ADD r2, r2, r3
    ADDI r2, r2, 0x1008        # r2 = descriptor
    CSRR r3, EPC
    ST r3, r2, 4               # saved_pc
    ST r0, r2, 8               # r0
    LD r3, r0, 0x3000
    ST r3, r2, 12              # r1
    LD r3, r0, 0x3004
    ST r3, r2, 16              # r2
    LD r3, r0, 0x3008
    ST r3, r2, 20              # r3
    ST r4, r2, 24
    ST r5, r2, 28
    ST r6, r2, 32
    ST r7, r2, 36
    ST r8, r2, 40
    ST r9, r2, 44
    ST r10, r2, 48
    ST r11, r2, 52
    ST r12, r2, 56
    ST r13, r2, 60
    ST r14, r2, 64
    ST r15, r2, 68
    JAL r0, dispatch

# ---- descriptor address: r1 = task -> r2, clobbers r3, link r12
descof:
    ADDI r3, r0, 6
    SHL r2, r1, r3
    ADDI r3, r0, 3
    SHL r3, r1, r3
    ADD r2, r2, r3
    ADDI r2, r2, 0x1008
    JALR r0, r12, 0

dispatch:
    CSRR r1, CAUSE
    ADDI r2, r0, 32
    BEQ r1, r2, sys_dispatch
    BEQ r1, r0, timer_irq
    ADDI r2, r0, 1
    BEQ r1, r2, console_irq
    # unexpected trap: retire the offending task
    LD r1, r0, 0x1004
    ADDI r2, r0, -1
    BEQ r1, r2, kernel_halt
    JAL r12, descof
    ADDI r3, r0, 3
    ST r3, r2, 0
    JAL r0, schedule

# ---- timer: end of time slice
timer_irq:
    LD r1, r0, 0x1004
    ADDI r2, r0, -1
    BEQ r1, r2, schedule
    JAL r12, descof
    LD r3, r2, 0
    ADDI r4, r0, 1
    BNE r3, r4, schedule
    ST r0, r2, 0               # running -> ready
    JAL r0, schedule

# ---- console rx: drain FIFO into the ring, wake blocked readers
console_irq:
    LUI r10, 0xF000
drain_loop:
    LD r1, r10, 0              # CONSOLE_STATUS
    BEQ r1, r0, drain_done
    LD r1, r10, 4              # CONSOLE_RX
    LD r2, r0, 0x3014          # ring tail
    ADDI r3, r0, 255
    AND r3, r2, r3
    ADDI r4, r0, 2
    SHL r3, r3, r4
    ADDI r3, r3, 0x3100
    ST r1, r3, 0
    ADDI r2, r2, 1
    ST r2, r0, 0x3014
    JAL r0, drain_loop
drain_done:
    JAL r14, wake_blocked
    JAL r0, schedule

# ---- hand ring bytes to blocked readers; link r14
wake_blocked:
    ADDI r1, r0, 0
wb_loop:
    LD r5, r0, 0x1000
    BEQ r1, r5, wb_ret
    LD r6, r0, 0x3010          # head
    LD r7, r0, 0x3014          # tail
    BEQ r6, r7, wb_ret
    JAL r12, descof
    LD r3, r2, 0
    ADDI r4, r0, 2
    BNE r3, r4, wb_next
    ADDI r3, r0, 255
    AND r3, r6, r3
    ADDI r4, r0, 2
    SHL r3, r3, r4
    ADDI r3, r3, 0x3100
    LD r3, r3, 0
    ST r3, r2, 12              # byte -> saved r1
    ADDI r6, r6, 1
    ST r6, r0, 0x3010
    ST r0, r2, 0               # blocked -> ready
wb_next:
    ADDI r1, r1, 1
    JAL r0, wb_loop
wb_ret:
    JALR r0, r14, 0

# ---- syscalls; number in saved r15
sys_dispatch:
    LD r1, r0, 0x1004
    JAL r12, descof
    LD r3, r2, 68              # saved r15
    BEQ r3, r0, sys_yield
    ADDI r4, r0, 1
    BEQ r3, r4, sys_putchar
    ADDI r4, r0, 2
    BEQ r3, r4, sys_getchar
    ADDI r4, r0, 3
    BEQ r3, r4, sys_gettime
    ADDI r4, r0, 4
    BEQ r3, r4, sys_exit
sys_exit:                      # also the unknown-syscall path
    ADDI r3, r0, 3
    ST r3, r2, 0
    JAL r0, schedule
sys_yield:
    ST r0, r2, 0
    JAL r0, schedule
sys_putchar:
    LD r3, r2, 12              # saved r1
    LUI r4, 0xF000
    ST r3, r4, 8               # CONSOLE_TX
    JAL r0, schedule
sys_gettime:
    LUI r4, 0xF000
    LD r3, r4, 0x10            # TIMER_NOW
    ST r3, r2, 12
    JAL r0, schedule
sys_getchar:
    LD r6, r0, 0x3010
    LD r7, r0, 0x3014
    BEQ r6, r7, gc_block
    ADDI r3, r0, 255
    AND r3, r6, r3
    ADDI r4, r0, 2
    SHL r3, r3, r4
    ADDI r3, r3, 0x3100
    LD r3, r3, 0
    ST r3, r2, 12
    ADDI r6, r6, 1
    ST r6, r0, 0x3010
    JAL r0, schedule
gc_block:
    ADDI r3, r0, 2
    ST r3, r2, 0
    JAL r0, schedule

# ---- scheduler: keep a running CURRENT, else round-robin scan
schedule:
    LD r1, r0, 0x1004
    ADDI r2, r0, -1
    BEQ r1, r2, sched_none
    JAL r12, descof
    LD r3, r2, 0
    ADDI r4, r0, 1
    BEQ r3, r4, resume         # still running
    JAL r0, sched_scan
sched_none:
    ADDI r1, r0, -1
sched_scan:
    LD r5, r0, 0x1000          # N
    ADDI r6, r0, 0             # candidates tried
scan_loop:
    BEQ r6, r5, no_ready
    ADDI r1, r1, 1
    BLT r1, r5, no_wrap
    ADDI r1, r0, 0
no_wrap:
    JAL r12, descof
    LD r3, r2, 0
    BEQ r3, r0, resume         # ready
    ADDI r6, r6, 1
    JAL r0, scan_loop

no_ready:
    ADDI r1, r0, 0
    ADDI r6, r0, 0             # live (non-exited) tasks
chk_loop:
    BEQ r1, r5, chk_done
    JAL r12, descof
    LD r3, r2, 0
    ADDI r4, r0, 3
    BEQ r3, r4, chk_next
    ADDI r6, r6, 1
chk_next:
    ADDI r1, r1, 1
    JAL r0, chk_loop
chk_done:
    BNE r6, r0, go_idle
    HALT                       # every task exited

go_idle:
    ADDI r1, r0, -1
    ST r1, r0, 0x1004          # CURRENT = none
    ADDI r1, r0, 1
    ST r1, r0, 0x300C          # in_idle
    LUI r2, 0xF000
    ADDI r3, r0, 10
    ST r3, r2, 0x14            # keep the timer ticking while idle
    ADDI r3, r0, 1
    CSRW STATUS, r3            # ie on
idle_loop:
    BEQ r0, r0, idle_loop

# ---- resume task r1
resume:
    ST r1, r0, 0x1004
    JAL r12, descof
    ADDI r3, r0, 1
    ST r3, r2, 0               # running
    LUI r3, 0xF000
    ADDI r4, r0, 10
    ST r4, r3, 0x14            # 10 ms slice
    LD r3, r2, 4
    CSRW EPC, r3
    ADDI r3, r0, 1
    CSRW ESTATUS, r3           # user mode, interrupts on
    CSRW MARK, r3
    LD r4, r2, 24
    LD r5, r2, 28
    LD r6, r2, 32
    LD r7, r2, 36
    LD r8, r2, 40
    LD r9, r2, 44
    LD r10, r2, 48
    LD r11, r2, 52
    LD r12, r2, 56
    LD r13, r2, 60
    LD r14, r2, 64
    LD r15, r2, 68
    LD r1, r2, 12
    LD r3, r2, 20
    LD r2, r2, 16
    ERET
"""

# -- sample tasks -------------------------------------------------------

TASK_ECHO = """
echo_loop:
    ADDI r15, r0, 2            # getchar
    ECALL
    ADDI r2, r0, 4             # EOT ends the session
    BEQ r1, r2, echo_done
    ADDI r15, r0, 1            # putchar
    ECALL
    JAL r0, echo_loop
echo_done:
    ADDI r15, r0, 4
    ECALL
"""

TASK_COMPUTE = """
    LUI r2, 0x8                # ~1M instructions of busy work
compute_loop:
    ADDI r2, r2, -1
    BNE r2, r0, compute_loop
    ADDI r15, r0, 4
    ECALL
"""

# Two copies of this race over the shared word at 0x2000. The spin between
# load and store widens the window a preempting slice can land in.
TASK_RACEY = """
    ADDI r5, r0, 1200          # increments
racey_outer:
    LD r6, r0, 0x2000
    ADDI r7, r0, 60
racey_window:
    ADDI r7, r7, -1
    BNE r7, r0, racey_window
    ADDI r6, r6, 1
    ST r6, r0, 0x2000
    ADDI r7, r0, 180
racey_pad:
    ADDI r7, r7, -1
    BNE r7, r0, racey_pad
    ADDI r5, r5, -1
    BNE r5, r0, racey_outer
    ADDI r15, r0, 4
    ECALL
"""

TASK_TICKER = """
ticker_loop:
    ADDI r15, r0, 3            # gettime
    ECALL
    ADDI r1, r0, 46            # '.'
    ADDI r15, r0, 1
    ECALL
    LUI r7, 0x1
ticker_delay:
    ADDI r7, r7, -1
    BNE r7, r0, ticker_delay
    JAL r0, ticker_loop
"""


class BuildError(ValueError):
    pass


@dataclass
class GuestImage:
    kernel_image: bytes
    disk_image: bytes
    kernel_program: object      # AsmProgram for the merged image
    num_tasks: int


def build_guest_image(kernel_source=KERNEL_SOURCE, task_sources=(),
                      disk_image=b""):
    """Assemble kernel and tasks into one bootable image. Task i's code is
    placed at TASK_REGION_BASE + i * TASK_REGION_SIZE; its descriptor gets
    state=ready, saved_pc at the region base and r13 near the region top."""
    if len(task_sources) > MAX_TASKS:
        raise BuildError("%d tasks, limit is %d" % (len(task_sources), MAX_TASKS))
    kprog = assemble(kernel_source)
    if len(kprog.image) > KERNEL_LIMIT:
        raise BuildError("kernel image extends into the task region")

    task_progs = []
    for i, src in enumerate(task_sources):
        base = TASK_REGION_BASE + i * TASK_REGION_SIZE
        prog = assemble(".org 0x%X\n" % base + src)
        if len(prog.image) > base + TASK_REGION_SIZE:
            raise BuildError("task %d overflows its region" % i)
        task_progs.append(prog)

    size = max([len(kprog.image), TASK_TABLE_ADDR + MAX_TASKS * TASK_DESC_STRIDE]
               + [len(p.image) for p in task_progs])
    image = bytearray(size)
    image[:len(kprog.image)] = kprog.image
    symbols = dict(kprog.symbols)
    listing = dict(kprog.listing)
    for i, prog in enumerate(task_progs):
        base = TASK_REGION_BASE + i * TASK_REGION_SIZE
        image[base:len(prog.image)] = prog.image[base:]
        for name, addr in prog.symbols.items():
            symbols["task%d.%s" % (i, name)] = addr
        listing.update(prog.listing)

    def put_word(addr, value):
        image[addr:addr + 4] = (value & 0xFFFFFFFF).to_bytes(4, "little")

    put_word(NUM_TASKS_ADDR, len(task_sources))
    put_word(CURRENT_ADDR, CURRENT_NONE)
    for i in range(len(task_sources)):
        desc = TASK_TABLE_ADDR + i * TASK_DESC_STRIDE
        base = TASK_REGION_BASE + i * TASK_REGION_SIZE
        put_word(desc + 0, TASK_STATE_READY)
        put_word(desc + 4, base)                       # saved_pc
        put_word(desc + 8 + 13 * 4, base + TASK_REGION_SIZE - 0x100)  # r13

    merged = type(kprog)(source=kernel_source, symbols=symbols,
                         image=bytes(image), listing=listing)
    return GuestImage(kernel_image=bytes(image), disk_image=bytes(disk_image),
                      kernel_program=merged, num_tasks=len(task_sources))


SAMPLE_TASKS = {
    "echo": [TASK_ECHO, TASK_COMPUTE],
    "racey": [TASK_RACEY, TASK_RACEY],
    "ticker": [TASK_TICKER],
}


def sample_guest(name, disk_image=b""):
    if name not in SAMPLE_TASKS:
        raise BuildError("unknown sample guest %r (have: %s)"
                         % (name, ", ".join(sorted(SAMPLE_TASKS))))
    return build_guest_image(task_sources=SAMPLE_TASKS[name],
                             disk_image=disk_image)
