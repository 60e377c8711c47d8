"""Trace format: serialization, hashing, event stream, checkpoints."""

import struct

import pytest

from ervm.counter import Counter, CounterConfig, PROFILE_PPC
from ervm.devices import Devices, MODE_FREE
from ervm.errors import CorruptLog
from ervm.machine import reset
from ervm.tracelog import (Checkpoint, Event, EV_HALT, EV_IRQ, EV_STATE_HASH,
                           TraceHeader, TraceLog, TraceWriter,
                           deserialize_state, load_checkpoint, serialize_state,
                           state_hash, write_checkpoint)


def _fresh(mem_size=4096):
    m = reset(b"", mem_size)
    c = Counter(CounterConfig())
    d = Devices(b"", MODE_FREE)
    d.machine = m
    return m, c, d


def _header():
    return TraceHeader.fresh(mem_size=4096, kernel_image_hash="0" * 64,
                             disk_image_hash="0" * 64,
                             counter_config=CounterConfig())


# -- serialization ------------------------------------------------------

def test_serialize_reset_state_stable():
    a = serialize_state(*_fresh())
    b = serialize_state(*_fresh())
    assert a == b


def test_serialize_sensitive_to_memory_byte():
    m1, c1, d1 = _fresh()
    m2, c2, d2 = _fresh()
    m2.mem[100] ^= 1
    assert serialize_state(m1, c1, d1) != serialize_state(m2, c2, d2)


def test_serialize_sensitive_to_register():
    m1, c1, d1 = _fresh()
    m2, c2, d2 = _fresh()
    m2.regs[5] ^= 1
    assert state_hash(m1, c1, d1) != state_hash(m2, c2, d2)


def test_serialize_round_trip():
    m, c, d = _fresh()
    m.regs[3] = 0xDEADBEEF
    m.pc = 0x40
    m.retired = 7
    for _ in range(7):
        c.retire(False, 0)
    d.overlay[2] = b"\x55" * 512
    d.sector_reg = 2
    blob = serialize_state(m, c, d)
    m2, c2, d2 = _fresh()
    deserialize_state(blob, m2, c2, d2)
    assert serialize_state(m2, c2, d2) == blob
    assert m2.regs[3] == 0xDEADBEEF and m2.pc == 0x40 and m2.retired == 7
    assert d2.overlay == {2: b"\x55" * 512}


def test_ppc_counter_serializes_as_corrected_view():
    """The serialized counter is profile independent: a PPC counter with
    raw 105 / snapshot 5 hashes like an exact counter at 100."""
    m1, _, d1 = _fresh()
    ppc = Counter(CounterConfig(profile=PROFILE_PPC))
    for k in range(5):
        ppc.mode_switch(True, 0)
    for _ in range(100):
        ppc.retire(True, 0)
    exact = Counter(CounterConfig())
    for _ in range(100):
        exact.retire(True, 0)
    m2, _, d2 = _fresh()
    assert state_hash(m1, ppc, d1) == state_hash(m2, exact, d2)


def test_console_fifo_serializes_empty():
    m, c, d = _fresh()
    base = serialize_state(m, c, d)
    d.rx_queue.extend(b"pending")
    assert serialize_state(m, c, d) == base


def test_state_hash_reset_twice_equal():
    assert state_hash(*_fresh()) == state_hash(*_fresh())


# -- event stream -------------------------------------------------------

def test_event_round_trip_through_file(tmp_path):
    path = str(tmp_path / "t.log")
    header = _header()
    writer = TraceWriter(path, header)
    events = [Event(seq=i + 1, icount=i * 10, kind=EV_IRQ, line=i % 2)
              for i in range(1000)]
    for ev in events:
        writer.append_event(ev)
    writer.close()
    log = TraceLog.read(path)
    assert log.events == events
    assert log.header.counter_config == header.counter_config


def test_same_icount_ordered_by_seq(tmp_path):
    writer = TraceWriter(str(tmp_path / "t.log"), _header())
    writer.append_event(Event(1, 100, EV_IRQ, line=0))
    writer.append_event(Event(2, 100, EV_IRQ, line=1))
    writer.close()


def test_decreasing_icount_rejected(tmp_path):
    writer = TraceWriter(str(tmp_path / "t.log"), _header())
    writer.append_event(Event(1, 100, EV_IRQ, line=0))
    with pytest.raises(CorruptLog):
        writer.append_event(Event(3, 99, EV_IRQ, line=0))


def test_non_increasing_seq_rejected(tmp_path):
    writer = TraceWriter(str(tmp_path / "t.log"), _header())
    writer.append_event(Event(2, 100, EV_IRQ, line=0))
    with pytest.raises(CorruptLog):
        writer.append_event(Event(2, 101, EV_IRQ, line=0))


def test_event_after_halt_rejected(tmp_path):
    writer = TraceWriter(str(tmp_path / "t.log"), _header())
    writer.append_event(Event(1, 100, EV_HALT))
    with pytest.raises(CorruptLog):
        writer.append_event(Event(2, 101, EV_IRQ, line=0))


def test_read_rejects_tampered_order(tmp_path):
    path = str(tmp_path / "t.log")
    writer = TraceWriter(path, _header())
    writer.append_event(Event(1, 100, EV_IRQ, line=0))
    writer.append_event(Event(2, 200, EV_IRQ, line=0))
    writer.close()
    lines = open(path).read().splitlines()
    lines[1], lines[2] = lines[2], lines[1]
    open(path, "w").write("\n".join(lines) + "\n")
    with pytest.raises(CorruptLog):
        TraceLog.read(path)


def test_read_rejects_garbage_header(tmp_path):
    path = str(tmp_path / "t.log")
    open(path, "w").write("not json\n")
    with pytest.raises(CorruptLog):
        TraceLog.read(path)


def test_read_empty_file(tmp_path):
    path = str(tmp_path / "t.log")
    open(path, "w").close()
    with pytest.raises(CorruptLog):
        TraceLog.read(path)


# -- checkpoints --------------------------------------------------------

def _ckpt(icount):
    m, c, d = _fresh()
    return Checkpoint(icount=icount, retired=icount, log_cursor=0,
                      state_hash=state_hash(m, c, d),
                      state=serialize_state(m, c, d))


def test_checkpoint_load_rules(tmp_path):
    log_path = str(tmp_path / "t.log")
    write_checkpoint(log_path, _ckpt(0))
    write_checkpoint(log_path, _ckpt(5000))
    assert load_checkpoint(log_path, 7000).icount == 5000
    assert load_checkpoint(log_path, 5000).icount == 5000
    assert load_checkpoint(log_path, 4999).icount == 0


def test_no_checkpoint_means_reset(tmp_path):
    assert load_checkpoint(str(tmp_path / "t.log"), 9999) is None


def test_checkpoint_state_round_trip(tmp_path):
    log_path = str(tmp_path / "t.log")
    ck = _ckpt(123)
    write_checkpoint(log_path, ck)
    loaded = load_checkpoint(log_path, 123)
    assert loaded.state == ck.state
    assert loaded.state_hash == ck.state_hash
    assert loaded.log_cursor == ck.log_cursor
