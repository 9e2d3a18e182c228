"""Scenario runner and report emitter.

Structured reports are JSON with these frozen top-level keys:

``schema``
    ``"bluechain.report/1"``
``config``
    the :class:`ScenarioConfig` fields
``records``
    one object per run, ordered by ``run_index`` (see :class:`RunRecord`)
``aggregate``
    ``runs``, ``successes``, ``success_fraction`` (``"k/n"``),
    ``success_rate`` (exact: an integer when it is 0 or 1), ``mean_trials``,
    ``expected_success_rate``
``assumptions``
    conditions the verdicts rely on; secured scenarios list
    :data:`HONEST_REGISTRY`
``timing``
    ``wall_time_s``; the only field allowed to differ between identical runs
"""
from __future__ import annotations

import argparse
import hashlib
import json
import random
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from typing import Optional

from .adversary import AttackKind, AttackOutcome
from .chainpair import LedgerChannel, LedgerTampered, attack_secured, secure_pairing
from .ledger import Block, export_chain, validate_chain
from .pairing import PairingSession, Stage, run_session
from .testbed import CASE_STUDY_PAYLOAD, Testbed, attack_baseline, make_testbed

SCHEMA = "bluechain.report/1"
HONEST_REGISTRY = "honest-registry: each registered public key belongs to the device whose address it is filed under"

SCENARIOS = (
    "pair-baseline", "pair-secured",
    "attack-knob", "attack-bias", "attack-pincrack",
    "attack-knob-secured", "attack-bias-secured", "attack-pincrack-secured",
    "tamper-ledger",
)
_ATTACKS = {"knob": AttackKind.KNOB, "bias": AttackKind.BIAS, "pincrack": AttackKind.PIN_CRACK}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int = 1
    runs: int = 1
    pin_digits: int = 4
    min_entropy: Optional[int] = None
    replicas: int = 5
    faulty_voters: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.pin_digits not in (4, 6):
            raise ConfigError("pin_digits must be 4 or 6")
        if self.min_entropy is not None and not 1 <= self.min_entropy <= 16:
            raise ConfigError("min_entropy must be 1..16")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if not 0 <= self.faulty_voters < self.replicas:
            raise ConfigError("faulty_voters must satisfy 0 <= faulty_voters < replicas")

    @property
    def secured(self) -> bool:
        return self.scenario in ("pair-secured", "tamper-ledger") or self.scenario.endswith("-secured")

    @property
    def quorum_ok(self) -> bool:
        return 2 * (self.replicas - self.faulty_voters) > self.replicas


@dataclass
class RunRecord:
    run_index: int
    seed: int
    verdict: bool
    stage_trace: list[str]
    trace_digest: str
    rounds: int
    trials: int = 0
    outcome: Optional[AttackOutcome] = None
    chain_length: Optional[int] = None
    negotiated_entropy: Optional[int] = None
    first_invalid_index: Optional[int] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outcome"] = None if self.outcome is None else self.outcome.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["outcome"] = None if d["outcome"] is None else AttackOutcome.from_dict(d["outcome"])
        return cls(**d)


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    records: list[RunRecord] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def successes(self) -> int:
        return sum(r.verdict for r in self.records)

    @property
    def success_rate(self) -> Fraction:
        return Fraction(self.successes, len(self.records))

    @property
    def mean_trials(self) -> Fraction:
        return Fraction(sum(r.trials for r in self.records), len(self.records))

    def first_invalid_indices(self) -> list[Optional[int]]:
        return [r.first_invalid_index for r in self.records]


def expected_success_rate(config: ScenarioConfig) -> Fraction:
    """The documented verdict each scenario is expected to reproduce."""
    name = config.scenario
    if name.endswith("-secured") and name.startswith("attack-"):
        return Fraction(0)
    if name in ("pair-secured", "tamper-ledger"):
        return Fraction(int(config.quorum_ok))
    if name == "attack-knob" and config.min_entropy is not None and config.min_entropy > 1:
        return Fraction(0)
    return Fraction(1)


# -- one run -----------------------------------------------------------------


def _bed(config: ScenarioConfig, seed: int) -> Testbed:
    return make_testbed(
        seed, pin_digits=config.pin_digits, secured=config.secured, replicas=config.replicas,
        min_entropy=config.min_entropy or 1,
    )


def _networks(bed: Testbed) -> list:
    nets = [bed.net]
    other = getattr(bed.channel, "net", bed.channel)
    if other is not None and other is not bed.net:
        nets.append(other)
    return nets


def _trace_digest(bed: Testbed, session: Optional[PairingSession]) -> str:
    h = hashlib.sha256()
    for net in _networks(bed):
        h.update(net.export_transcript().encode())
    if session is not None:
        h.update(">".join(s.value for s in session.stage_trace).encode())
    return h.hexdigest()


def _install_tamper(channel: LedgerChannel, rng: random.Random, after_commits: int, state: dict) -> None:
    def hook(ch: LedgerChannel, block: Block) -> None:
        chain = ch.replicas[ch.local_replica]
        if "index" in state or len(chain) - 1 < after_commits:
            return
        index = rng.randrange(1, len(chain))
        target = chain.blocks[index]
        flipped = bytearray(target.payload)
        flipped[rng.randrange(len(flipped))] ^= 1 << rng.randrange(8)
        chain.blocks[index] = replace(target, payload=bytes(flipped))
        state["index"] = index

    channel.after_commit.append(hook)


def run_once(config: ScenarioConfig, run_index: int) -> tuple[RunRecord, Testbed]:
    seed = (config.seed + run_index) % (1 << 64)
    bed = _bed(config, seed)
    faulty = range(config.faulty_voters)
    outcome: Optional[AttackOutcome] = None
    first_invalid = None
    name = config.scenario

    if name == "pair-baseline":
        payload = bed.payload()
        session = run_session(PairingSession(bed.initiator, bed.responder, seed), bed.net, payload)
        verdict = session.stage is Stage.DATA_EXCHANGE and session.received == [payload]
    elif name == "pair-secured":
        payload = bed.payload()
        session = secure_pairing(bed.initiator, bed.responder, bed.replicas, bed.registry, bed.net,
                                 seed=seed, payload=payload, setup_payload=CASE_STUDY_PAYLOAD,
                                 faulty_voters=faulty)
        bed.channel = session.channel
        verdict = (session.stage is Stage.DATA_EXCHANGE and session.received == [payload]
                   and session.setup_received == CASE_STUDY_PAYLOAD)
    elif name == "tamper-ledger":
        session = PairingSession(bed.initiator, bed.responder, seed, mutual_auth=True)
        channel = LedgerChannel(bed.net, bed.replicas, bed.registry, seed=seed, faulty_voters=faulty)
        state: dict = {}
        _install_tamper(channel, bed.streams.stream("TAMPER"), 3, state)
        bed.channel = channel
        run_session(session, channel, bed.payload(), setup_payload=CASE_STUDY_PAYLOAD)
        if isinstance(session.error, LedgerTampered):
            first_invalid = session.error.index
        else:
            first_invalid = validate_chain(bed.replicas[0])[1]
        verdict = session.failed and "index" in state and first_invalid == state["index"]
    else:
        kind = _ATTACKS[name.split("-")[1]]
        if config.secured:
            outcome = attack_secured(kind, bed, pin_digits=config.pin_digits, faulty_voters=faulty)
        else:
            outcome = attack_baseline(kind, bed, pin_digits=config.pin_digits)
        session = bed.session
        verdict = outcome.succeeded

    record = RunRecord(
        run_index=run_index,
        seed=seed,
        verdict=bool(verdict),
        stage_trace=[s.value for s in session.stage_trace] if session else [],
        trace_digest=_trace_digest(bed, session),
        rounds=sum(net.rounds for net in _networks(bed)),
        trials=outcome.trials_used if outcome else 0,
        outcome=outcome,
        chain_length=len(bed.replicas[0]) if bed.replicas else None,
        negotiated_entropy=session.keys.negotiated_entropy if session else None,
        first_invalid_index=first_invalid,
        error=None if session is None or session.error is None else f"{type(session.error).__name__}: {session.error}",
    )
    return record, bed


def run_scenario_with_testbeds(config: ScenarioConfig) -> tuple[ScenarioReport, list[Testbed]]:
    """Like :func:`run_scenario`, also returning each run's testbed."""
    start = time.perf_counter()
    records, beds = [], []
    for i in range(config.runs):
        record, bed = run_once(config, i)
        records.append(record)
        beds.append(bed)
    return ScenarioReport(config, records, time.perf_counter() - start), beds


def run_scenario(config: ScenarioConfig) -> ScenarioReport:
    """Execute ``config.runs`` seeded runs; run ``i`` uses ``seed + i``."""
    return run_scenario_with_testbeds(config)[0]


# -- emission ----------------------------------------------------------------


def _exact(q: Fraction):
    return int(q) if q.denominator == 1 else float(q)


def report_to_dict(report: ScenarioReport, include_timing: bool = True) -> dict:
    d = {
        "schema": SCHEMA,
        "config": asdict(report.config),
        "records": [r.to_dict() for r in report.records],
        "aggregate": {
            "runs": len(report.records),
            "successes": report.successes,
            "success_fraction": f"{report.successes}/{len(report.records)}",
            "success_rate": _exact(report.success_rate),
            "mean_trials": _exact(report.mean_trials),
            "expected_success_rate": _exact(expected_success_rate(report.config)),
        },
    }
    d["assumptions"] = [HONEST_REGISTRY] if report.config.secured else []
    if include_timing:
        d["timing"] = {"wall_time_s": report.wall_time_s}
    return d


def parse_report(data: bytes | str) -> ScenarioReport:
    d = json.loads(data)
    if d.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema {d.get('schema')!r}")
    config = ScenarioConfig(**d["config"])
    records = [RunRecord.from_dict(r) for r in d["records"]]
    return ScenarioReport(config, records, d.get("timing", {}).get("wall_time_s", 0.0))


def _human(report: ScenarioReport) -> str:
    c = report.config
    lines = [
        f"scenario {c.scenario}  seed={c.seed} runs={c.runs} pin_digits={c.pin_digits} "
        f"min_entropy={c.min_entropy} replicas={c.replicas} faulty_voters={c.faulty_voters}"
    ]
    for r in report.records:
        line = (f"run {r.run_index:>3} seed={r.seed} verdict={'yes' if r.verdict else 'no'} "
                f"trials={r.trials} rounds={r.rounds} stages={'>'.join(r.stage_trace) or '-'}")
        if r.chain_length is not None:
            line += f" chain={r.chain_length}"
        if r.first_invalid_index is not None:
            line += f" first_invalid_block={r.first_invalid_index}"
        if r.outcome is not None and r.outcome.notes:
            line += f" notes={r.outcome.notes!r}"
        elif r.error:
            line += f" error={r.error!r}"
        lines.append(line)
    lines.append(
        f"success rate {report.successes}/{len(report.records)} "
        f"(expected {expected_success_rate(c)}), mean trials {float(report.mean_trials):g}"
    )
    if c.secured:
        lines.append(f"assumes {HONEST_REGISTRY}")
    lines.append(f"wall time {report.wall_time_s:.3f}s")
    return "\n".join(lines) + "\n"


def emit_report(report: ScenarioReport, format: str = "structured", include_timing: bool = True) -> bytes:
    if format == "structured":
        return (json.dumps(report_to_dict(report, include_timing), indent=2, sort_keys=True) + "\n").encode()
    if format == "human-text":
        return _human(report).encode()
    raise ValueError(f"unknown report format {format!r}")


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bluechain", description="Run seeded pairing/attack/ledger scenarios.")
    p.add_argument("--config", metavar="PATH", help="JSON file with ScenarioConfig fields; flags override it")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--pin-digits", type=int, choices=(4, 6))
    p.add_argument("--min-entropy", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--faulty-voters", type=int)
    p.add_argument("--format", choices=("human-text", "structured"), default="human-text")
    p.add_argument("--export-chain", metavar="PATH", help="write run 0's ledger copy as JSON Lines")
    p.add_argument("--assert-expected", action="store_true",
                   help="exit 1 unless the success rate equals the scenario's expected verdict")
    return p


def config_from_args(args: argparse.Namespace) -> ScenarioConfig:
    values: dict = {}
    if args.config:
        with open(args.config) as fh:
            values.update(json.load(fh))
        unknown = set(values) - {f.name for f in fields(ScenarioConfig)}
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
    for name in ("scenario", "seed", "runs", "pin_digits", "min_entropy", "replicas", "faulty_voters"):
        value = getattr(args, name)
        if value is not None:
            values[name] = value
    if "scenario" not in values:
        raise ConfigError("a scenario is required (--scenario or config file)")
    return ScenarioConfig(**values)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
    except (ConfigError, TypeError, OSError, json.JSONDecodeError) as exc:
        parser.error(str(exc))
    report, beds = run_scenario_with_testbeds(config)
    if args.export_chain:
        if not beds[0].replicas:
            parser.error(f"scenario {config.scenario} keeps no ledger to export")
        with open(args.export_chain, "w") as fh:
            fh.write(export_chain(beds[0].replicas[0]))
    sys.stdout.buffer.write(emit_report(report, args.format))
    if args.assert_expected and report.success_rate != expected_success_rate(config):
        return 1
    return 0
