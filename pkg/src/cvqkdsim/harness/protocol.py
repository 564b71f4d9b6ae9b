"""TX and RX round state machines and the full run.

The two endpoints share nothing but the quantum channel view of the
current round and the classical byte channel. All time is logical: a
round lasts ``burst / burst_fraction`` seconds, the TX burst starts
right after the RX's polarization optimization, and the RX duty cycle is
its busy time (optimization, capture, calibration and offline DSP) over
the round period.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import LinkProfile, RngStream, lookup_link, read_link_file
from ..polctl import PaddleState, SpsaConfig, optimize_polarization, paddle_unitary
from ..recon.ldpc import LdpcCode, load_code
from ..recon.md import MdMap
from ..recon.pipeline import (BobFrame, RateAdaptation, ReconReport, adapt_rate,
                              alice_decode, bob_encode)
from ..recon.privacy import toeplitz_extract
from ..rxdsp import (DetectorConfig, adaptive_trigger, calibration_capture,
                     power_spectrum, receive_frames, write_psd_csv)
from ..security import (ChannelEstimate, SecurityResult,
                        calibrate_snu, estimate_channel, evaluate_security,
                        holevo_bound, mutual_information)
from ..txdsp import (FRAME_SAMPLES, FRAMES_PER_BLOCK, QUANTUM_PER_FRAME, TxSignalPlan,
                     TxStream, assemble_frame, sample_gaussian_symbols)
from .codec import ClassicalChannel, ClassicalMessage, MessageType
from .config import RunConfig
from .delivery import DeliveryReport, deliver
from .encryptor import RefreshPolicy
from .keys import KEY_PAIR_BITS, KeyBuffer, KeyManager, write_key_files
from .link import ENVELOPE_RATE_HZ, FRAME_S, FrameObservation, SymbolLink
from .reports import relative_snr_report, skr_report, write_relative_snr_csv
from .waveform import WaveformLink

__all__ = ["RoundRecord", "TxRound", "RoundChannel", "TxNode", "RxNode", "RunResult",
           "run", "write_round_csv", "ROUND_CSV_COLUMNS"]

log = logging.getLogger(__name__)

ROUND_CSV_COLUMNS = ["round_index", "captured_states", "pilot_snr_db", "snu_factor",
                     "xi_u_msnu", "loss_u_db", "xi_t_msnu", "skr_kbps"]
TX_TO_RX = "tx->rx"
RX_TO_TX = "rx->tx"
_SWITCH_S = 0.05
_V_MOD_RANGE = (0.5, 20.0)


# ---------------------------------------------------------------------------
# Payload packing


def _pack(*arrays) -> bytes:
    buf = io.BytesIO()
    for a in arrays:
        np.save(buf, np.asarray(a), allow_pickle=False)
    return buf.getvalue()


def _unpack(payload: bytes, count: int) -> list:
    buf = io.BytesIO(payload)
    return [np.load(buf, allow_pickle=False) for _ in range(count)]


def _pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True).encode()


# ---------------------------------------------------------------------------
# Records


@dataclass
class RoundRecord:
    round_index: int
    blocks_captured: int
    states_measured: int
    failed_frames: int
    pilot_snr_db: float
    snu_factor: float
    estimate: ChannelEstimate | None
    security: SecurityResult | None
    duty_cycle: float
    v_mod: float
    recon: ReconReport | None = None
    final_key_bits: int = 0
    qpsk_snr_db: list = field(default_factory=list)
    capture: dict = field(default_factory=dict)

    @property
    def skr_kbps(self) -> float:
        return self.security.skr_bps / 1e3 if self.security is not None else 0.0

    @property
    def empty(self) -> bool:
        return self.estimate is None

    def csv_row(self) -> list:
        est = self.estimate
        nan = float("nan")
        return [
            self.round_index,
            self.states_measured,
            f"{self.pilot_snr_db:.3f}",
            f"{self.snu_factor:.6f}",
            f"{(est.xi_u * 1e3 if est else nan):.4f}",
            f"{(est.loss_u_db if est else nan):.4f}",
            f"{(est.xi_t * 1e3 if est else nan):.4f}",
            f"{self.skr_kbps:.4f}",
        ]

    def to_dict(self) -> dict:
        est = self.estimate
        return {
            "round_index": self.round_index,
            "blocks_captured": self.blocks_captured,
            "states_measured": self.states_measured,
            "failed_frames": self.failed_frames,
            "pilot_snr_db": self.pilot_snr_db,
            "snu_factor": self.snu_factor,
            "duty_cycle": self.duty_cycle,
            "v_mod": self.v_mod,
            "estimate": None if est is None else {
                "eta": est.eta, "xi": est.xi, "v_el": est.v_el, "v_mod": est.v_mod,
                "eta_u": est.eta_u, "xi_u": est.xi_u, "eta_se": est.eta_se,
                "xi_se": est.xi_se, "n_symbols": est.n_symbols},
            "security": None if self.security is None else {
                "i_ab": self.security.i_ab, "chi_be": self.security.chi_be,
                "beta": self.security.beta, "fer": self.security.fer,
                "skr_bps": self.security.skr_bps},
            "recon": None if self.recon is None else self.recon.to_dict(),
            "final_key_bits": self.final_key_bits,
            "capture": self.capture,
        }


def write_round_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_CSV_COLUMNS)
        for rec in records:
            w.writerow(rec.csv_row())


# ---------------------------------------------------------------------------
# Transmitter


@dataclass
class TxRound:
    round_index: int
    frame_ids: list            # per block, FRAMES_PER_BLOCK ids
    block_starts: np.ndarray   # seconds after the burst start
    v_mod: float
    symbols: dict              # frame id -> Alice's complex symbols

    @property
    def n_frames(self) -> int:
        return sum(len(b) for b in self.frame_ids)


class TxNode:
    """Alice: emits bursts, answers PE and reconciliation messages."""

    def __init__(self, cfg: RunConfig, plan: TxSignalPlan, rng: RngStream,
                 classical: ClassicalChannel, code: LdpcCode):
        self.cfg = cfg
        self.plan = plan
        self.rng = rng
        self.net = classical
        self.code = code
        self.v_mod = cfg.v_mod
        self.next_frame_id = 0
        self.keys = KeyBuffer()
        self.current: TxRound | None = None

    def run_tx_round(self, r: int) -> TxRound:
        """Draw the round's symbols; blocks go out back to back at the block period."""
        rng = self.rng.substream(f"round-{r}")
        ids, symbols = [], {}
        sigma = math.sqrt(self.v_mod)
        for _ in range(self.cfg.n_blocks):
            block = []
            for _ in range(FRAMES_PER_BLOCK):
                fid = self.next_frame_id
                self.next_frame_id += 1
                symbols[fid] = sample_gaussian_symbols(rng.substream(f"frame-{fid}"),
                                                       QUANTUM_PER_FRAME, sigma)
                block.append(fid)
            ids.append(block)
        starts = np.arange(self.cfg.n_blocks) * self.cfg.block_period_s
        self.current = TxRound(r, ids, starts, self.v_mod, symbols)
        return self.current

    def handle_pe(self) -> ChannelEstimate | None:
        """Estimate from Bob's disclosed frames and send the result back."""
        msg = self.net.receive(RX_TO_TX, MessageType.PE_DATA)
        ids, bob, cal = _unpack(msg.payload, 3)
        if ids.size == 0:
            self.net.send(TX_TO_RX, ClassicalMessage(MessageType.PE_DATA, _pack_json(None)))
            return None
        alice = np.concatenate([self.current.symbols[int(i)] for i in ids])
        record = calibrate_snu(float(cal[0]), float(cal[1]))
        est = estimate_channel(alice, bob, record, v_mod=None, eta_t=self.cfg.eta_t)
        payload = {k: getattr(est, k) for k in
                   ("v_mod", "eta", "xi", "v_el", "n_symbols", "eta_t", "eta_se", "xi_se")}
        self.net.send(TX_TO_RX, ClassicalMessage(MessageType.PE_DATA, _pack_json(payload)))
        if self.cfg.v_mod_auto:
            self._steer_v_mod(est)
        return est

    def _steer_v_mod(self, est: ChannelEstimate) -> None:
        target = 2.0 ** (2.0 * self.code.rate / self.cfg.beta) - 1.0
        gain2 = est.eta / 2.0
        if gain2 > 0:
            v = target * (1.0 + est.xi) / gain2
            self.v_mod = float(np.clip(v, *_V_MOD_RANGE))

    def handle_reconciliation(self, est: ChannelEstimate) -> tuple[int, int]:
        """Decode Bob's frames; returns (decoded frames, attempted frames)."""
        head = json.loads(self.net.receive(RX_TO_TX, MessageType.FRAME_IDS).payload)
        adapt = _adaptation(self.code, head)
        gain = math.sqrt(est.eta / 2.0)
        noise_var = 1.0 + est.xi
        results, decoded_bits = [], []
        for chunk_ids in head["frames"]:
            syn, short = _unpack(self.net.receive(RX_TO_TX, MessageType.SYNDROME).payload, 2)
            m, norms = _unpack(self.net.receive(RX_TO_TX, MessageType.MD_MAPS).payload, 2)
            hkey, hval = struct.unpack(">QQ", self.net.receive(RX_TO_TX, MessageType.VERIFY_HASH).payload)
            frame = BobFrame(np.unpackbits(syn)[:self.code.m], MdMap(self.cfg.d, m, norms),
                             short, hkey, hval)
            x = _reals(np.concatenate([self.current.symbols[int(i)] for i in chunk_ids]))
            x = x[head["offset"]:head["offset"] + adapt.n_channel]
            bits, _ = alice_decode(self.code, x, frame, gain, noise_var, adapt,
                                   self.cfg.llr_scale, self.cfg.max_iters)
            results.append(bits is not None)
            if bits is not None:
                decoded_bits.append(bits[adapt.key_positions])
        self.net.send(TX_TO_RX, ClassicalMessage(MessageType.VERIFY_HASH,
                                                 bytes(int(r) for r in results)))
        self._decoded = decoded_bits
        return sum(results), len(results)

    def handle_privacy_amplification(self) -> int:
        out_len = struct.unpack(">Q", self.net.receive(RX_TO_TX, MessageType.PA_SEED).payload)[0]
        if out_len:
            seed = _unpack(self.net.receive(RX_TO_TX, MessageType.PA_SEED).payload, 1)[0]
            key = np.concatenate(self._decoded)
            final = toeplitz_extract(key, np.unpackbits(seed)[:key.size + out_len - 1], out_len)
            self.keys.append(final)
        self._decoded = []
        return out_len


def _reals(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return np.column_stack([z.real, z.imag]).reshape(-1)


def _adaptation(code: LdpcCode, head: dict) -> RateAdaptation:
    return RateAdaptation(code.n, code.m,
                          punctured=np.asarray(head["punctured"], dtype=np.int64),
                          shortened=np.asarray(head["shortened"], dtype=np.int64))


# ---------------------------------------------------------------------------
# Quantum channel view


class RoundChannel:
    """What the RX can observe of one TX round through the link."""

    def __init__(self, link: SymbolLink, emission: TxRound, rng: RngStream,
                 cfg: RunConfig, profile: LinkProfile, plan: TxSignalPlan,
                 det: DetectorConfig):
        self._link = link
        self._tx = emission
        self._rng = rng
        self._cfg = cfg
        self._profile = profile
        self._plan = plan
        self._det = det

    def optimize(self, spsa: SpsaConfig, rng) -> tuple[PaddleState, list, float]:
        """Run SPSA on the live link; returns (state, trace, elapsed seconds)."""
        link = self._link
        obj = link.objective(rng, self._cfg.measurement_noise, self._cfg.spsa_eval_s)
        state, trace = optimize_polarization(link.paddle, obj, spsa, rng)
        elapsed = (1 + 3 * spsa.n_iter) * self._cfg.spsa_eval_s
        link.adopt(obj, state, elapsed)
        return state, trace, elapsed

    def envelope(self, duration_s: float) -> np.ndarray:
        return self._link.envelope(self._tx.block_starts, duration_s,
                                   self._rng.substream("envelope").generator)

    def observe(self, block: int, rng) -> list:
        """Frames of ``block`` as recovered by the receiver DSP."""
        link = self._link
        link.advance(self._tx.block_starts[block] - (link.time_s - self._burst_t0))
        ids = self._tx.frame_ids[block]
        if self._cfg.fidelity == "waveform":
            return self._observe_waveform(block, ids, rng)
        return link.observe_block(ids, [self._tx.symbols[i] for i in ids], self._tx.v_mod, rng)

    def _observe_waveform(self, block: int, ids, rng) -> list:
        link = self._link
        frames = [assemble_frame(i % (1 << 16), self._tx.symbols[i], self._plan) for i in ids]
        stream = TxStream(frames, self._plan, lead_in=FRAME_SAMPLES // 10)
        wl = WaveformLink(stream, self._profile, self._det,
                          self._rng.substream(f"waveform-{block}"),
                          sop_initial=link.sop, compensation=paddle_unitary(link.paddle))
        demods, _ = receive_frames(wl, self._plan, self._det, len(ids))
        out = []
        by_id = {i % (1 << 16): i for i in ids}
        for d in demods:
            if d.frame_id in by_id:
                out.append(FrameObservation(by_id[d.frame_id], d.quantum_symbols,
                                            d.pilot_snr_db, d.qpsk_snr_db, link.overlap()))
        link.advance(len(ids) * FRAME_S)
        return out

    def start_burst(self) -> None:
        self._burst_t0 = self._link.time_s


# ---------------------------------------------------------------------------
# Receiver


class RxNode:
    """Bob: optimizes polarization, captures, calibrates, demodulates and drives
    parameter estimation and reconciliation."""

    def __init__(self, cfg: RunConfig, rng: RngStream, classical: ClassicalChannel,
                 code: LdpcCode):
        self.cfg = cfg
        self.rng = rng
        self.net = classical
        self.code = code
        self.trigger_level = cfg.trigger_level
        self.keys = KeyBuffer()
        self.det = DetectorConfig(eta_t=cfg.eta_t, elec_noise=cfg.elec_noise,
                                  pilot_snr_threshold_db=cfg.pilot_snr_threshold_db)
        self.spsa = SpsaConfig(n_iter=cfg.spsa_iters, measurement_noise=cfg.measurement_noise)

    def run_rx_round(self, r: int, channel: RoundChannel, tx: TxNode) -> RoundRecord:
        cfg = self.cfg
        rng = self.rng.substream(f"round-{r}")
        _, trace, t_spsa = channel.optimize(self.spsa, rng.substream("spsa").generator)
        channel.start_burst()

        # capture: trigger on the envelope until the burst and one timeout have passed
        timeout_s = cfg.trigger_timeout_blocks * cfg.block_period_s
        window = cfg.burst_s + timeout_s
        env = channel.envelope(window)
        block_ms = int(round(FRAMES_PER_BLOCK * FRAME_S * ENVELOPE_RATE_HZ))
        cap = adaptive_trigger(env, self.trigger_level, block_ms,
                               int(round(timeout_s * ENVELOPE_RATE_HZ)),
                               max_blocks=min(cfg.max_blocks, 100))
        self.trigger_level = cap.trigger_level
        period_ms = cfg.block_period_s * ENVELOPE_RATE_HZ
        blocks = sorted({int(round(t / period_ms)) for t in cap.blocks
                         if 0 <= round(t / period_ms) < cfg.n_blocks})
        t_capture = ((blocks[-1] * cfg.block_period_s + FRAMES_PER_BLOCK * FRAME_S)
                     if blocks else window)

        obs_rng = rng.substream("frames").generator
        observed = []
        for b in blocks:
            observed.extend(channel.observe(b, obs_rng))

        var_on, var_off = calibration_capture(self.det, rng.substream("calibration").generator,
                                              cfg.calibration_samples)
        cal = calibrate_snu(var_on, var_off)
        t_cal = 2 * cfg.calibration_samples / 1e9 + _SWITCH_S
        t_dsp = cfg.dsp_s_per_block * len(blocks)
        duty = min((t_spsa + t_capture + t_cal + t_dsp) / cfg.round_period_s, 1.0)

        kept = [o for o in observed if o.pilot_snr_db >= cfg.pilot_snr_threshold_db]
        failed = len(blocks) * FRAMES_PER_BLOCK - len(kept)
        scale = 1.0 / math.sqrt(cal.u / self.det.gain ** 2)
        capture = {"trigger_level": cap.trigger_level, "timeouts": cap.timeouts,
                   "noise_captures": cap.noise_captures, "blocks": blocks,
                   "spsa_final_r": trace[-1].r, "frames_kept": len(kept),
                   "calibration": {"var_on": var_on, "var_off": var_off}}
        record = RoundRecord(
            round_index=r,
            blocks_captured=len(blocks),
            states_measured=len(kept) * QUANTUM_PER_FRAME,
            failed_frames=failed,
            pilot_snr_db=float(np.mean([o.pilot_snr_db for o in kept])) if kept else float("nan"),
            snu_factor=cal.u,
            estimate=None,
            security=None,
            duty_cycle=duty,
            v_mod=tx.current.v_mod,
            qpsk_snr_db=[o.qpsk_snr_db for o in kept],
            capture=capture,
        )

        # parameter estimation on a disclosed share of the frames
        order = rng.substream("pe").generator.permutation(len(kept))
        n_pe = int(round(cfg.pe_fraction * len(kept)))
        if kept and n_pe == 0:
            n_pe = 1
        pe = sorted(order[:n_pe])
        key_frames = [kept[i] for i in sorted(order[n_pe:])]
        pe_ids = np.array([kept[i].frame_id for i in pe], dtype=np.int64)
        pe_bob = (np.concatenate([kept[i].symbols for i in pe]) * scale
                  if pe else np.zeros(0, complex))
        self.net.send(RX_TO_TX, ClassicalMessage(
            MessageType.PE_DATA, _pack(pe_ids, pe_bob, np.array([var_on, var_off]))))
        tx.handle_pe()
        reply = json.loads(self.net.receive(TX_TO_RX, MessageType.PE_DATA).payload)
        if reply is None:
            log.info("round %d captured nothing usable", r)
            return record
        est = ChannelEstimate(**reply)
        record.estimate = est
        record.security = evaluate_security(est, cfg.baud, cfg.fer, cfg.beta)

        if cfg.recon_max_frames > 0 and key_frames:
            self._reconcile(record, est, key_frames, scale, rng, tx)
        return record

    def _reconcile(self, record: RoundRecord, est: ChannelEstimate, frames: list,
                   scale: float, rng: RngStream, tx: TxNode) -> None:
        cfg, code = self.cfg, self.code
        snr = est.eta / 2.0 * est.v_mod / (1.0 + est.xi)
        adapt = (adapt_rate(code, snr, cfg.beta, cfg.d) if cfg.rate_adapt and snr > 0
                 else RateAdaptation.none(code))
        per_frame = 2 * QUANTUM_PER_FRAME
        need = -(-adapt.n_channel // per_frame)
        chunks = [frames[i:i + need] for i in range(0, len(frames) - need + 1, need)]
        chunks = chunks[:cfg.recon_max_frames]
        report = ReconReport(code=code.name, code_rate=adapt.rate, snr=snr)
        if snr > 0:
            report.beta = adapt.rate / (0.5 * math.log2(1.0 + snr))
        record.recon = report
        if not chunks:
            return
        head = {"frames": [[o.frame_id for o in c] for c in chunks], "offset": 0,
                "punctured": adapt.punctured.tolist(), "shortened": adapt.shortened.tolist()}
        self.net.send(RX_TO_TX, ClassicalMessage(MessageType.FRAME_IDS, _pack_json(head)))
        enc_rng = rng.substream("recon").generator
        words = []
        for c in chunks:
            y = _reals(np.concatenate([o.symbols for o in c]) * scale)[:adapt.n_channel]
            u, msg = bob_encode(code, y, enc_rng, adapt, cfg.d)
            words.append(u)
            self.net.send(RX_TO_TX, ClassicalMessage(
                MessageType.SYNDROME, _pack(np.packbits(msg.syndrome), msg.shortened_bits)))
            self.net.send(RX_TO_TX, ClassicalMessage(MessageType.MD_MAPS,
                                                     _pack(msg.md.m, msg.md.norms)))
            self.net.send(RX_TO_TX, ClassicalMessage(
                MessageType.VERIFY_HASH, struct.pack(">QQ", msg.hash_key, msg.hash_value)))

        # TX decodes the frames it has just been sent
        tx.handle_reconciliation(est)
        flags = self.net.receive(TX_TO_RX, MessageType.VERIFY_HASH).payload
        key_bits = []
        for ok, u in zip(flags, words):
            report.record(bool(ok))
            if ok:
                key_bits.append(u[adapt.key_positions])
        decoded = report.frames_decoded
        raw = sum(k.size for k in key_bits) - decoded * code.m
        chi = holevo_bound(est)
        n_cplx = decoded * adapt.n_channel / 2.0
        n_attempted = len(chunks) * adapt.n_channel / 2.0
        ceiling = n_attempted * (report.beta * mutual_information(est) - chi)
        out_len = max(int(math.floor(min(raw - chi * n_cplx, ceiling))), 0)
        self.net.send(RX_TO_TX, ClassicalMessage(MessageType.PA_SEED, struct.pack(">Q", out_len)))
        if out_len:
            key = np.concatenate(key_bits)
            seed = rng.substream("pa-seed").generator.integers(0, 2, key.size + out_len - 1,
                                                               dtype=np.uint8)
            self.net.send(RX_TO_TX, ClassicalMessage(MessageType.PA_SEED,
                                                     _pack(np.packbits(seed))))
            self.keys.append(toeplitz_extract(key, seed, out_len))
        tx.handle_privacy_amplification()
        record.final_key_bits = out_len


# ---------------------------------------------------------------------------
# Run


@dataclass
class RunResult:
    config: RunConfig
    records: list
    alice_keys: list
    bob_keys: list
    net_bytes: int
    spectra: dict = field(default_factory=dict)
    delivery: DeliveryReport | None = None


def _profile(cfg: RunConfig) -> LinkProfile:
    if cfg.links_file:
        return lookup_link(cfg.link, read_link_file(cfg.links_file))
    return lookup_link(cfg.link)


def run(cfg: RunConfig, out_dir=None, profile: LinkProfile | None = None,
        code: LdpcCode | None = None) -> RunResult:
    """Execute ``cfg.rounds`` rounds and, if ``out_dir`` is given, write all outputs."""
    profile = profile or _profile(cfg)
    code = code or load_code(cfg.code)
    master = RngStream(cfg.seed)
    plan = TxSignalPlan(v_mod=cfg.v_mod)
    net = ClassicalChannel()
    tx = TxNode(cfg, plan, master.substream("tx"), net, code)
    rx = RxNode(cfg, master.substream("rx"), net, code)
    link = SymbolLink(profile, plan, master.substream("link"), cfg.eta_t, cfg.elec_noise)
    records = []
    for r in range(cfg.rounds):
        # idle gap up to the start of this round's optimization
        link.advance(r * cfg.round_period_s - link.time_s)
        emission = tx.run_tx_round(r)
        if r == 0:
            spectra = _spectra(emission, profile, rx.det, link, master.substream("spectra"))
        view = RoundChannel(link, emission, master.substream("channel").substream(f"round-{r}"),
                            cfg, profile, TxSignalPlan(v_mod=emission.v_mod), rx.det)
        rec = rx.run_rx_round(r, view, tx)
        records.append(rec)
        log.info("round %d: %d blocks, SKR %.1f kbps, %d key bits", r, rec.blocks_captured,
                 rec.skr_kbps, rec.final_key_bits)

    alice_mgr, bob_mgr = KeyManager(tx.keys), KeyManager(rx.keys)
    alice_keys, bob_keys = _drain(alice_mgr), _drain(bob_mgr)
    for a, b in zip(alice_keys, bob_keys):
        if a.key_id != b.key_id or not np.array_equal(a.bits, b.bits):
            raise RuntimeError(f"key mismatch at key_id {a.key_id}")
    policy = RefreshPolicy(cfg.refresh_period_s, cfg.refresh_messages)
    delivery = deliver(alice_keys, bob_keys, cfg.messages, policy,
                       master.substream("delivery").generator, cfg.message_interval_s)
    result = RunResult(cfg, records, alice_keys, bob_keys, net.bytes_sent, spectra, delivery)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _spectra(emission: TxRound, profile: LinkProfile, det: DetectorConfig,
             link: SymbolLink, rng: RngStream) -> dict:
    """TX baseband and RX detector-output spectra of the first frame."""
    plan = TxSignalPlan(v_mod=emission.v_mod)
    fid = emission.frame_ids[0][0]
    frame = assemble_frame(fid % (1 << 16), emission.symbols[fid], plan)
    stream = TxStream([frame], plan)
    tx = stream.render(0, stream.length)
    wl = WaveformLink(stream, profile, det, rng, sop_initial=link.sop,
                      compensation=paddle_unitary(link.paddle))
    rx = wl.read(0, stream.length)
    return {"tx": power_spectrum(tx), "rx": power_spectrum(rx)}


def _drain(mgr: KeyManager) -> list:
    out = []
    while len(mgr.buffer) >= KEY_PAIR_BITS:
        out.append(mgr.issue())
    return out


def write_outputs(result: RunResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_round_csv(out / "rounds.csv", result.records)
    for rec in result.records:
        (out / f"round_{rec.round_index:02d}.json").write_text(
            json.dumps(rec.to_dict(), indent=2, sort_keys=True) + "\n")
    rounds_snr = [rec.qpsk_snr_db for rec in result.records if len(rec.qpsk_snr_db) >= 2]
    if rounds_snr:
        write_relative_snr_csv(out / "relative_snr.csv", relative_snr_report(rounds_snr))
    summary = skr_report(result.records)
    (out / "summary.json").write_text(json.dumps({
        "link": result.config.link,
        "seed": result.config.seed,
        "rounds": len(result.records),
        "skr_mean_kbps": summary.mean_kbps,
        "skr_std_kbps": summary.std_kbps,
        "key_pairs": len(result.alice_keys),
        "classical_bytes": result.net_bytes,
        "delivery": result.delivery.to_dict() if result.delivery else None,
    }, indent=2, sort_keys=True) + "\n")
    for name, (f, p) in result.spectra.items():
        write_psd_csv(out / f"psd_{name}.csv", f, p)
    write_key_files(out, result.alice_keys, "alice_keys")
    write_key_files(out, result.bob_keys, "bob_keys")
