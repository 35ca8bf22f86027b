"""Command line: bootstrap, tower, verify and cert subcommands.

Exit codes: 0 ok, 1 verification failure, 2 input error, 3 search exhausted.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock, Timeout

from .ball import Ball
from .embed import (
    EmbeddingCertificate,
    check_involutions_conjugate_ball,
    replay_certificate,
    verify_aux_condition,
)
from .errors import InvalidInputError, S2TError, SearchFailure
from .exactlin import Matrix
from .tower import (
    DEFAULT_PARAMS,
    TowerState,
    bootstrap,
    canonical_json,
    check_dimensions,
    config_hash,
    gen_letters,
    run_tower,
)
from .verify import (
    VerificationReport,
    build_action_ball,
    check_commuting_normal_ball,
    check_embedded_action,
    check_malnormal,
    check_no_involutions,
    check_pchar2,
    check_sharp2trans_witnesses,
)
from .words import word_from_json, word_str

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_SEARCH = 0, 1, 2, 3

BUDGET_KEYS = ("stages", "enumRadius", "certRadius", "exponentCap", "LmaxExp", "retryCap",
               "heightBound", "memberRadius", "conjRadius", "precheckRadius")


@dataclass
class RunConfig:
    n: int
    r: int
    h_gens: list
    a_gens: list
    budgets: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "run"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj) -> "RunConfig":
        try:
            n, r = int(obj["n"]), int(obj["r"])
            h_gens = [(g["name"], Matrix.from_json(g["matrix"])) for g in obj["H"]]
            a_gens = []
            for a in obj.get("A", []):
                a_gens.append(Matrix.from_json(a["matrix"]) if "matrix" in a else word_from_json(a["word"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed config: {exc!r}") from None
        budgets = {"stages": 3, **{k: v for k, v in DEFAULT_PARAMS.items()}, **obj.get("budgets", {})}
        cfg = cls(n, r, h_gens, a_gens, budgets, int(obj.get("seed", 0)), obj.get("out", "run"), dict(obj))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        check_dimensions(self.n, self.r)
        for name, m in self.h_gens:
            if m.n != self.n:
                raise InvalidInputError(f"generator {name!r} is not {self.n} x {self.n}")
        for k in BUDGET_KEYS:
            v = self.budgets.get(k)
            if not isinstance(v, int) or v < (0 if k == "stages" else 1):
                raise InvalidInputError(f"budget {k!r} must be a positive integer, got {v!r}")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be an unsigned 64-bit integer")

    def hash(self) -> str:
        obj = dict(self.raw)
        obj["seed"] = self.seed
        obj["budgets"] = dict(self.budgets)
        obj.pop("out", None)
        return config_hash(obj)

    @property
    def params(self) -> dict:
        return {k: v for k, v in self.budgets.items() if k != "stages"}


# -- file helpers ---------------------------------------------------------------------


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(canonical_json(obj), encoding="utf-8")
    os.replace(tmp, path)


def read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidInputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not valid JSON: {exc}") from None


def load_state(path: Path) -> TowerState:
    return TowerState.from_json(read_json(path))


def save_state(state: TowerState, path: Path) -> None:
    write_json(path, state.to_json())
    certs_dir = path.parent / "certs"
    for name, cert in state.certs.items():
        target = certs_dir / f"{name}.json"
        if not target.exists():
            write_json(target, cert)


def _lock(path: Path) -> FileLock:
    path.parent.mkdir(parents=True, exist_ok=True)
    return FileLock(str(path) + ".lock", timeout=0)


def _err(msg: str, witness=None) -> None:
    print(f"error: {msg}", file=sys.stderr)
    if witness is not None:
        print(f"witness: {json.dumps(witness, sort_keys=True)}", file=sys.stderr)


# -- subcommands ------------------------------------------------------------------------


def cmd_bootstrap(args) -> int:
    cfg = RunConfig.from_json(read_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.radius is not None:
        cfg.budgets["certRadius"] = args.radius
    cfg.validate()
    out = Path(args.out or cfg.out)
    state_path = Path(args.state) if args.state else out / "tower.json"
    with _lock(state_path):
        state = bootstrap(cfg.h_gens, cfg.a_gens, cfg.r, cfg.budgets["certRadius"], cfg.seed,
                          cfg.params, cfg.hash())
        save_state(state, state_path)
    checks = state.history[0]["checks"]
    cert = state.certs["bootstrap"]
    print(f"t = diag(1^{state.r}, (-1)^{state.n - state.r}); L = {cert['scheme']['L']}; "
          f"radius = {cert['radius']}; exponent cap = {cert['exponentCap']}; "
          f"checked words = {cert['checkedWords']}")
    print("checks: " + ", ".join(f"{k}={'pass' if v else 'FAIL'}" for k, v in sorted(checks.items())))
    print(f"state written to {state_path}")
    return EXIT_OK if all(checks.values()) and cert["aux"] else EXIT_VERIFY


def cmd_tower(args) -> int:
    out = Path(args.out) if args.out else None
    state_path = Path(args.state) if args.state else (out or Path("run")) / "tower.json"
    if not state_path.exists():
        raise InvalidInputError(f"no state file at {state_path}; run bootstrap first")
    with _lock(state_path):
        state = load_state(state_path)
        stages = args.stages
        if stages is None and args.config:
            stages = RunConfig.from_json(read_json(args.config)).budgets["stages"]
        if stages is None:
            stages = DEFAULT_PARAMS.get("stages", 3)
        if stages < 0:
            raise InvalidInputError("--stages must be >= 0")
        if state.stages_done >= stages:
            print(f"{state.stages_done} stages already done; nothing to do")
            return EXIT_OK
        advanced = state.stages_done > 0 or state.processed
        if advanced and not args.resume:
            raise InvalidInputError("state already advanced; pass --resume to continue it")
        target = state_path if out is None else out / "tower.json"

        def save(s):
            save_state(s, target)

        try:
            state, report = run_tower(state, stages, save=save,
                                      log=(lambda m: print(m)) if args.verbose else None)
        except SearchFailure as exc:
            _err(str(exc), exc.diagnostics)
            return EXIT_SEARCH
        save_state(state, target)
    print(f"stages done: {state.stages_done}; ledger entries: {len(state.ledger)}; "
          f"skipped: {len(state.skipped)}")
    for name in report.certificates:
        c = state.certs[name]
        print(f"  {name}: {c['kind']} L = {c['scheme']['L']} checked words = {c['checkedWords']}")
    return EXIT_OK


def run_checks(state: TowerState, radius: int | None = None) -> list:
    """The full verification suite over a state."""
    pm = state.params
    rad = radius or pm["certRadius"]
    n = state.n
    g1 = state.g_letters(1)
    a = state.a_letters()
    reports = []
    reports.append(check_malnormal(g1, a, rad, rad, n))
    reports.append(check_no_involutions(a, rad, n))
    entries = []
    witness_bad = []
    t = state.t.matrix
    for e in state.ledger:
        v_word, f_word = word_from_json(e["v"]), word_from_json(e["f"])
        v, f = state.evaluate(v_word), state.evaluate(f_word)
        entries.append((v_word, f_word, v, f))
        w = e.get("witness", {}).get("word")
        if w is not None and state.evaluate(word_from_json(w)) != t @ f @ v.inverse():
            witness_bad.append({"v": e["v"], "f": e["f"], "witness": w})
    if entries:
        s2 = check_sharp2trans_witnesses(entries, t, a, max(rad, pm["memberRadius"]),
                                         coverage_letters=g1, coverage_radius=2)
    else:
        # nothing to witness before the first tower stage
        s2 = VerificationReport("sharp2trans_witnesses", True, {"A": rad},
                                notes={"skipped": "ledger is empty"})
    if witness_bad:
        s2.passed = False
        s2.witnesses.extend({"stored_witness_mismatch": b} for b in witness_bad)
    reports.append(s2)
    c_rad = min(rad, 3)
    ab = build_action_ball(g1, a, c_rad, 2 * c_rad, n)
    reports.append(check_pchar2(ab))
    gb = Ball(g1, rad, n)
    aux = verify_aux_condition(gb, state.t)
    reports.append(VerificationReport("aux_condition", aux.ok, {"G": rad}, aux.witnesses.get("aux", [])))
    conj = Ball(g1, pm["conjRadius"], n, gb.p)
    inv = check_involutions_conjugate_ball(gb, t, conj)
    reports.append(VerificationReport("involutions_conjugate", inv.ok,
                                      {"G": rad, "conjugation": pm["conjRadius"]},
                                      inv.witnesses.get("involutions_conjugate", [])))
    h = state.g_letters(1, state.h_names)
    reports.append(check_embedded_action(h, gen_letters(state.table, state.a_orig), a, rad, n=n))
    reports.append(check_commuting_normal_ball(g1, min(rad, 3), n=n))
    bad_certs = []
    for name, obj in sorted(state.certs.items()):
        rep = replay_certificate(EmbeddingCertificate.from_json(obj))
        if not rep.ok:
            bad_certs.append({"cert": name, "failed": rep.failed()})
    reports.append(VerificationReport("certificates_replay", not bad_certs,
                                      {"count": len(state.certs)}, bad_certs))
    return reports


def cmd_verify(args) -> int:
    state_path = Path(args.state) if args.state else Path(args.out or "run") / "tower.json"
    state = load_state(state_path)
    reports = run_checks(state, args.radius)
    ok = all(r.passed for r in reports)
    out = Path(args.out) if args.out else state_path.parent
    write_json(out / "report.json", {
        "pass": ok,
        "checks": [r.to_json() for r in reports],
        "configHash": state.config_hash,
        "seed": state.seed,
        "stagesDone": state.stages_done,
    })
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check} radii={json.dumps(r.radii, sort_keys=True)}")
        for w in r.witnesses[:3]:
            print(f"    witness: {json.dumps(w, sort_keys=True)}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_cert(args) -> int:
    obj = read_json(args.path)
    try:
        cert = EmbeddingCertificate.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed certificate: {exc!r}") from None
    if args.action == "show":
        print(f"kind: {cert.kind}")
        print(f"radius: {cert.radius}")
        print(f"exponent cap: {cert.exponent_cap}")
        print(f"L: {cert.scheme.L}")
        print(f"checked words: {cert.checked_words}")
        print(f"aux condition: {cert.aux}")
        print(f"seed: {cert.seed}")
        if cert.kind == "hnn":
            print(f"conjugator: {word_str(cert.h_word)} (radius {cert.conj_radius})")
        return EXIT_OK
    rep = replay_certificate(cert)
    for k, v in rep.results.items():
        print(f"{'agree' if v else 'MISMATCH'} {k}")
    return EXIT_OK if rep.ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="s2tower", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration (JSON)")
        p.add_argument("--state", help="state file (default OUT/tower.json)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--radius", type=int, help="certificate / verification radius")

    p = sub.add_parser("bootstrap", help="realize <H, t> and write the initial state")
    common(p)
    p.set_defaults(func=cmd_bootstrap)
    p = sub.add_parser("tower", help="run extension stages")
    common(p)
    p.add_argument("--stages", type=int, help="total number of extension stages")
    p.add_argument("--resume", action="store_true", help="continue an advanced state")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_tower)
    p = sub.add_parser("verify", help="run every bounded check on a state")
    common(p)
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("cert", help="inspect or replay a certificate")
    p.add_argument("action", choices=["show", "replay"])
    p.add_argument("path")
    p.set_defaults(func=cmd_cert)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "bootstrap" and not args.config:
        _err("bootstrap needs --config")
        return EXIT_INPUT
    try:
        return args.func(args)
    except Timeout:
        _err("state file is locked by another process")
        return EXIT_INPUT
    except SearchFailure as exc:
        _err(str(exc), exc.diagnostics)
        return EXIT_SEARCH
    except S2TError as exc:
        _err(str(exc), getattr(exc, "witness", None))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
