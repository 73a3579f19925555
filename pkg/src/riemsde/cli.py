"""Command line experiment runner.

Config files are INI text. ``[run]`` may set ``experiment``, ``seed``,
``replicas``, ``workers`` and ``out``. Any other ``[section]`` / ``key``
pair overrides the experiment parameter ``section.key``; parameters
without a dot live in ``[params]``. Values are JSON literals or bare
strings.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from .experiments import DEFAULTS, EXPERIMENTS, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3
ABORT_LIMIT = 1e-3
CSV_HEADER = ["experiment", "manifold", "scale-parameter", "replicate-count", "mean",
              "standard-error", "slope-if-applicable", "pass-flag"]
RUN_KEYS = {"experiment": str, "seed": int, "replicas": int, "workers": int, "out": str}


class ConfigError(ValueError):
    pass


def _key_lines(text):
    """``(section, key) -> line number`` for every assignment in ``text``."""
    where, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = n
            continue
        m = re.match(r"([^=:]+)[=:]", s)
        if m and section is not None:
            where[(section, m.group(1).strip())] = n
    return where


def _coerce(raw, default, label):
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    if isinstance(default, bool):
        ok = isinstance(val, bool)
    elif isinstance(default, int):
        ok = isinstance(val, int) and not isinstance(val, bool)
    elif isinstance(default, float):
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
        val = float(val) if ok else val
    elif isinstance(default, list):
        ok = isinstance(val, list) and len(val) > 0
    else:
        ok = isinstance(val, str)
    if not ok:
        kind = "non-empty list" if isinstance(default, list) else type(default).__name__
        raise ConfigError(f"{label}: expected {kind}, got {raw!r}")
    return val


def parse_config(text: str, names):
    """Return ``(run settings, overrides)``; raise :class:`ConfigError` with a line."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: assignment before any [section]") from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0]
        raise ConfigError(f"line {line}: cannot parse {text.splitlines()[line - 1].strip()!r}") from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = str(exc).splitlines()[0]
        raise ConfigError(f"line {line}: {msg}" if line else msg) from None
    lines = _key_lines(text)
    known = {}
    for n in names:
        known.update({k: v for k, v in DEFAULTS[n].items()})
    run, overrides = {}, {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            line = lines.get((section, key), "?")
            label = f"line {line}: {section}.{key}"
            if section == "run":
                if key not in RUN_KEYS:
                    raise ConfigError(f"{label}: unknown run setting")
                try:
                    run[key] = RUN_KEYS[key](raw)
                except ValueError:
                    raise ConfigError(f"{label}: expected {RUN_KEYS[key].__name__}, got {raw!r}") from None
                continue
            name = key if section == "params" else f"{section}.{key}"
            if name not in known:
                raise ConfigError(f"{label}: unknown parameter {name!r}")
            overrides[name] = _coerce(raw, known[name], label)
    return run, overrides


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _catalog():
    lines = []
    for name, (_, module, text) in EXPERIMENTS.items():
        lines.append(f"{name}\t[{module}]\t{text}")
    return lines


def _print_defaults(out):
    for name in EXPERIMENTS:
        out.write(f"# {name}\n")
        for k, v in DEFAULTS[name].items():
            out.write(f"#   {k} = {json.dumps(v)}\n")


def _validate(name, p, replicas):
    if replicas < 1:
        raise ConfigError(f"{name}: replicas must be >= 1")
    for k, v in p.items():
        if isinstance(v, list) and not v:
            raise ConfigError(f"{name}.{k}: grid must be non-empty")


def run(args) -> int:
    names = list(EXPERIMENTS)
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        settings, overrides = parse_config(text, names)
        chosen = args.experiment or settings.get("experiment")
        if chosen is not None and chosen not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {chosen!r}; see list-experiments")
        selected = [chosen] if chosen else names
        used = set()
        for n in selected:
            used.update(DEFAULTS[n])
        stray = sorted(set(overrides) - used)
        if stray:
            raise ConfigError(f"parameter {stray[0]!r} does not apply to {', '.join(selected)}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seed = args.seed if args.seed is not None else settings.get("seed", 0)
    workers = args.workers if args.workers is not None else settings.get("workers", 1)
    out = Path(args.out or settings.get("out", "results"))

    results = []
    for n in selected:
        p = dict(DEFAULTS[n])
        p.update({k: v for k, v in overrides.items() if k in p})
        reps = args.replicas if args.replicas is not None else settings.get("replicas", p["replicas"])
        try:
            _validate(n, p, reps)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            res = run_experiment(n, p, seed, reps, workers)
        except ValueError as exc:
            print(f"config error: {n}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        results.append(res)
        verdict = "pass" if res.passed else "FAIL"
        print(f"{n}: {verdict} ({len(res.assertions)} assertions, {res.aborted} aborted)")

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for res in results:
            for row in res.rows:
                w.writerow([_fmt(row[h]) for h in CSV_HEADER])

    total = sum(r.replicas for r in results)
    aborted = sum(r.aborted for r in results)
    frac = aborted / total if total else 0.0
    passed = all(r.passed for r in results)
    status = "aborted" if frac > ABORT_LIMIT else ("pass" if passed else "fail")
    lines = [f"experiments={','.join(selected)}", f"seed={seed}"]
    for res in results:
        lines.append(f"{res.name}.replicates={res.replicas}")
        lines.append(f"{res.name}.aborted={res.aborted}")
        for a in res.assertions:
            lines += [f"{a.name}.value={_fmt(a.value)}", f"{a.name}.bound={a.bound}",
                      f"{a.name}.verdict={'pass' if a.passed else 'fail'}"]
        for k, v in res.extras.items():
            lines.append(f"{res.name}.{k}={_fmt(v)}")
    lines += [f"aborted_fraction={_fmt(frac)}", f"status={status}"]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")

    if frac > ABORT_LIMIT:
        print(f"abort fraction {frac:.3g} exceeds {ABORT_LIMIT}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK if passed else EXIT_FAIL


def build_parser():
    ap = argparse.ArgumentParser(prog="riemsde", description="Run manifold SDE experiments.")
    sub = ap.add_subparsers(dest="command")
    r = sub.add_parser("run", help="run one or all experiments")
    for a in (ap, r):
        a.add_argument("--config", help="INI file with [run] and parameter sections")
        a.add_argument("--out", help="output directory (default: results)")
        a.add_argument("--seed", type=int)
        a.add_argument("--replicas", type=int)
        a.add_argument("--workers", type=int)
        a.add_argument("--experiment", help="experiment name; all when omitted")
    ls = sub.add_parser("list-experiments", help="print the experiment catalog")
    ls.add_argument("--defaults", action="store_true", help="also print every default parameter")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        print("\n".join(_catalog()))
        if args.defaults:
            _print_defaults(sys.stdout)
        return EXIT_OK
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("config error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
