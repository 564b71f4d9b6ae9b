import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvqkdsim.core import FastFluct, LinkProfile, RngStream, SlowWalk, Static
from cvqkdsim.harness.codec import (ClassicalChannel, ClassicalMessage, CodecError, MessageType,
                                    decode, decode_stream, encode)
from cvqkdsim.harness.config import RunConfig, load_config
from cvqkdsim.harness.delivery import deliver, key_manager
from cvqkdsim.harness.encryptor import (MESSAGE_BYTES, AuthenticationFailed, Encryptor,
                                        NonceExhausted, RefreshPolicy)
from cvqkdsim.harness.keys import (KEY_PAIR_BITS, KeyBuffer, KeyManager, KeyPairRecord,
                                   KeysExhausted, read_key_files, write_key_files)
from cvqkdsim.harness.protocol import (ROUND_CSV_COLUMNS, TxNode, run, write_round_csv)
from cvqkdsim.harness.reports import relative_snr_report, skr_report
from cvqkdsim.recon.ldpc import load_code
from cvqkdsim.txdsp import FRAMES_PER_BLOCK, QUANTUM_PER_FRAME, TxSignalPlan

DESK = RunConfig(rounds=6, seed=0, recon_max_frames=0, messages=0)


class _Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def _pair_managers(n_pairs, seed=0):
    bits = np.random.default_rng(seed).integers(0, 2, n_pairs * KEY_PAIR_BITS)
    return KeyManager(KeyBuffer(bits)), KeyManager(KeyBuffer(bits.copy()))


@pytest.fixture(scope="module")
def static_run():
    profile = LinkProfile("static", 1.0, 2.0, sop_model=Static())
    return run(DESK, profile=profile)


# ---------------------------------------------------------------------------
# transmitter schedule


def test_tx_round_schedule():
    cfg = RunConfig()
    tx = TxNode(cfg, TxSignalPlan(), RngStream(0), ClassicalChannel(), code=None)
    first = tx.run_tx_round(0)
    assert first.n_frames * QUANTUM_PER_FRAME == 2_000_000
    ids = [i for block in first.frame_ids for i in block]
    assert all(b > a for a, b in zip(ids, ids[1:]))
    second = tx.run_tx_round(1)
    assert second.frame_ids[0][0] == ids[-1] + 1
    assert cfg.burst_s / cfg.round_period_s == pytest.approx(0.3)
    assert np.allclose(np.diff(first.block_starts), cfg.block_period_s)


# ---------------------------------------------------------------------------
# full rounds


def test_run_emits_one_record_per_round(static_run):
    assert [r.round_index for r in static_run.records] == list(range(6))


def test_duty_cycle_on_clean_static_link(static_run):
    for rec in static_run.records:
        assert 0.7 <= rec.duty_cycle <= 0.8


def test_states_measured_invariant(static_run):
    for rec in static_run.records:
        total = rec.blocks_captured * FRAMES_PER_BLOCK
        assert rec.states_measured == (total - rec.failed_frames) * QUANTUM_PER_FRAME
        assert rec.skr_kbps > 0


def test_round_csv(static_run, tmp_path):
    path = tmp_path / "rounds.csv"
    write_round_csv(path, static_run.records)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ROUND_CSV_COLUMNS
    assert len(lines) == 7


def test_dead_link_rounds_are_empty_not_fatal():
    dead = LinkProfile("dead", 100.0, 60.0, sop_model=Static())
    res = run(DESK.with_(rounds=2), profile=dead)
    assert len(res.records) == 2
    for rec in res.records:
        assert rec.empty and rec.skr_kbps == 0.0
    assert skr_report(res.records).mean_kbps == 0.0
    assert res.alice_keys == [] and res.delivery.messages == 0


def test_fast_fluct_broadens_relative_snr():
    cfg = DESK.with_(rounds=2, n_blocks=4)
    std = {}
    for name, model in (("slow", SlowWalk(1e-4)), ("fast", FastFluct(0.1, 10.0, 0.25))):
        res = run(cfg, profile=LinkProfile(name, 10.0, 4.0, sop_model=model))
        std[name] = relative_snr_report([r.qpsk_snr_db for r in res.records]).std
    assert std["fast"] > std["slow"]


# ---------------------------------------------------------------------------
# classical codec


def test_empty_pe_data_frame():
    assert encode(ClassicalMessage(MessageType.PE_DATA)) == b"\x00\x00\x00\x00\x05"


def test_codec_round_trip_many():
    rng = np.random.default_rng(0)
    types = list(MessageType)
    msgs = [ClassicalMessage(types[rng.integers(len(types))], rng.bytes(rng.integers(0, 64)))
            for _ in range(10_000)]
    for m in msgs:
        assert decode(encode(m)) == m
    assert decode_stream(b"".join(encode(m) for m in msgs)) == msgs


@given(st.sampled_from(list(MessageType)), st.binary(max_size=256))
def test_codec_round_trip_property(kind, payload):
    m = ClassicalMessage(kind, payload)
    assert decode(encode(m)) == m


@given(st.binary(min_size=1, max_size=64), st.data())
def test_truncated_frames_raise(payload, data):
    frame = encode(ClassicalMessage(MessageType.SYNDROME, payload))
    cut = data.draw(st.integers(0, len(frame) - 1))
    with pytest.raises(CodecError):
        decode(frame[:cut])
    with pytest.raises(CodecError):
        decode_stream(encode(ClassicalMessage(MessageType.PA_SEED)) + frame[:cut] if cut else b"\x00")


def test_unknown_type_and_trailing_bytes():
    with pytest.raises(CodecError):
        decode(struct.pack(">IB", 0, 99))
    with pytest.raises(CodecError):
        decode(encode(ClassicalMessage(MessageType.PA_SEED)) + b"\x00")


def test_classical_channel_is_ordered():
    ch = ClassicalChannel()
    ch.send("tx->rx", ClassicalMessage(MessageType.FRAME_IDS, b"a"))
    ch.send("tx->rx", ClassicalMessage(MessageType.SYNDROME, b"b"))
    assert ch.receive("tx->rx").payload == b"a"
    with pytest.raises(CodecError):
        ch.receive("tx->rx", expect=MessageType.MD_MAPS)
    assert ch.bytes_sent == 12


# ---------------------------------------------------------------------------
# keys


def test_key_ids_are_sequential():
    mgr, _ = _pair_managers(3)
    assert [mgr.issue().key_id for _ in range(3)] == [0, 1, 2]
    assert [struct.unpack(">Q", m.payload)[0] for m in mgr.announcements] == [0, 1, 2]


def test_identical_buffers_give_identical_keys():
    a, b = _pair_managers(4, seed=1)
    for _ in range(4):
        ka, kb = a.issue(), b.issue()
        assert ka.key_id == kb.key_id and np.array_equal(ka.bits, kb.bits)


def test_key_buffer_underrun():
    mgr = KeyManager(KeyBuffer(np.zeros(511, np.uint8)))
    with pytest.raises(KeysExhausted):
        mgr.issue()
    mgr.buffer.append([1])
    assert mgr.issue().key_id == 0


def test_key_buffer_rejects_non_bits():
    with pytest.raises(ValueError):
        KeyBuffer([0, 2])
    with pytest.raises(ValueError):
        KeyPairRecord(0, np.zeros(100))


def test_key_manager_get_issues_forward():
    mgr, _ = _pair_managers(5)
    assert mgr.get(3).key_id == 3
    assert mgr.next_id == 4
    with pytest.raises(KeyError):
        KeyManager(KeyBuffer(np.zeros(2048, np.uint8)), first_id=5).get(2)


def test_key_files_round_trip(tmp_path):
    mgr, _ = _pair_managers(3, seed=2)
    records = [mgr.issue() for _ in range(3)]
    bin_path, idx_path = write_key_files(tmp_path, records, "alice_keys")
    assert bin_path.stat().st_size == 3 * 64
    back = read_key_files(idx_path)
    assert [r.key_id for r in back] == [0, 1, 2]
    for a, b in zip(records, back):
        assert np.array_equal(a.bits, b.bits)


# ---------------------------------------------------------------------------
# encryptors


def _encryptors(n_pairs=4, policy=None, clock=None):
    a_mgr, b_mgr = _pair_managers(n_pairs)
    policy = policy or RefreshPolicy()
    clock = clock or _Clock()
    return Encryptor("A", a_mgr, policy, clock), Encryptor("B", b_mgr, policy, clock), clock


def test_encryptor_round_trip():
    a, b, _ = _encryptors(policy=RefreshPolicy(max_messages=10**6))
    rng = np.random.default_rng(3)
    for _ in range(1000):
        m = rng.bytes(MESSAGE_BYTES)
        assert b.decrypt(a.encrypt(m)) == m
        assert a.decrypt(b.encrypt(m)) == m


def test_tampered_ciphertext_fails():
    a, b, _ = _encryptors()
    packet = bytearray(a.encrypt(bytes(MESSAGE_BYTES)))
    for pos in (0, 25, len(packet) - 1):
        bad = bytearray(packet)
        bad[pos] ^= 0x01
        with pytest.raises(AuthenticationFailed):
            b.decrypt(bytes(bad))


def test_directions_use_different_keys():
    a, _, _ = _encryptors()
    with pytest.raises(AuthenticationFailed):
        a.decrypt(a.encrypt(bytes(MESSAGE_BYTES)))


def test_refresh_after_message_threshold():
    a, b, _ = _encryptors()
    for i in range(999):
        b.decrypt(a.encrypt(bytes(MESSAGE_BYTES)))
    assert a.key_id == 0
    b.decrypt(a.encrypt(bytes(MESSAGE_BYTES)))
    assert a.key_id == 1
    assert a.events[-1] == ("refresh", 1)


def test_refresh_after_time_threshold():
    a, _, clock = _encryptors(policy=RefreshPolicy(period_s=5.0))
    a.encrypt(bytes(MESSAGE_BYTES))
    clock.t = 5.0
    a.encrypt(bytes(MESSAGE_BYTES))
    assert a.key_id == 1


def test_exhaustion_keeps_current_key():
    a, b, _ = _encryptors(n_pairs=1, policy=RefreshPolicy(max_messages=2))
    for _ in range(5):
        m = bytes(MESSAGE_BYTES)
        assert b.decrypt(a.encrypt(m)) == m
    assert a.key_id == 0
    assert ("exhausted", 0) in a.events


def test_nonce_exhaustion_is_fatal():
    a, _, _ = _encryptors(policy=RefreshPolicy(max_messages=100, nonce_limit=2))
    a.encrypt(bytes(MESSAGE_BYTES))
    a.encrypt(bytes(MESSAGE_BYTES))
    with pytest.raises(NonceExhausted):
        a.encrypt(bytes(MESSAGE_BYTES))


def test_payload_size_enforced():
    a, _, _ = _encryptors()
    with pytest.raises(ValueError):
        a.encrypt(bytes(MESSAGE_BYTES - 1))
    with pytest.raises(ValueError):
        Encryptor("C", _pair_managers(1)[0])


def test_deliver_reports_refreshes():
    mgr, _ = _pair_managers(3, seed=4)
    keys = [mgr.issue() for _ in range(3)]
    rep = deliver(keys, keys, 2500, RefreshPolicy(max_messages=1000),
                  np.random.default_rng(5))
    assert rep.messages == 2500 and rep.failures == 0
    assert rep.first_refresh_at == 1000
    assert rep.key_ids_used == [0, 1, 2] and rep.key_ids_agree
    assert key_manager(keys).issue().key_id == 0


def test_deliver_detects_disagreeing_keys():
    mgr, _ = _pair_managers(2, seed=6)
    keys = [mgr.issue() for _ in range(2)]
    other = [KeyPairRecord(k.key_id, 1 - k.bits) for k in keys]
    rep = deliver(keys, other, 10, RefreshPolicy(), np.random.default_rng(7))
    assert rep.failures == 20 and not rep.key_ids_agree


# ---------------------------------------------------------------------------
# reports


def test_relative_snr_constant_rounds():
    rep = relative_snr_report([[20.0] * 10, [15.0] * 5])
    idx = np.searchsorted(rep.edges, 1.0) - 1
    assert rep.density[idx] * 0.01 == pytest.approx(1.0)
    assert rep.std == pytest.approx(0.0, abs=1e-12)
    assert np.diff(rep.edges) == pytest.approx(0.01)


def test_relative_snr_normalizes_per_round():
    rep = relative_snr_report([[10.0, 13.0103], [0.0, 3.0103]])
    assert np.allclose(np.sort(rep.values), [2 / 3, 2 / 3, 4 / 3, 4 / 3], atol=1e-4)
    with pytest.raises(ValueError):
        relative_snr_report([[10.0]])


def test_skr_report():
    assert skr_report([150.0] * 6).std_kbps == 0.0
    assert skr_report([0.0] * 6).mean_kbps == 0.0
    s = skr_report([100.0, 200.0, 600.0])
    assert s.mean_kbps == pytest.approx(300.0)
    assert s.std_kbps == pytest.approx(math.sqrt(70_000.0))
    assert s.rounds == 3
    with pytest.raises(ValueError):
        skr_report([])


# ---------------------------------------------------------------------------
# configuration


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nlink = L3\nrounds = 2\nrate_adapt = no\nbeta = 0.9\n")
    cfg = load_config(path, seed=9)
    assert (cfg.link, cfg.rounds, cfg.rate_adapt, cfg.beta, cfg.seed) == ("L3", 2, False, 0.9, 9)
    assert load_config(path, rounds=None).rounds == 2
    path.write_text("[run]\nbogus = 1\n")
    with pytest.raises(ValueError):
        load_config(path)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


@pytest.mark.parametrize("changes", [{"rounds": 0}, {"fidelity": "analog"},
                                     {"burst_fraction": 0.0}, {"beta": 1.5}])
def test_config_validation(changes):
    with pytest.raises(ValueError):
        RunConfig(**changes)


def test_default_code_loads():
    assert load_code(RunConfig().code).n % RunConfig().d == 0
