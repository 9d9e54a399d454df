"""Command-line entry points: center, partner, pooled, partition, report, demo.

Exit codes
----------
0  converged (or the command finished normally)
2  Newton iterations did not converge within max_iter_nb
3  protocol failure (timeout, malformed payload, partner error, I/O)
4  numeric failure (singular information matrix, overflow, ...)
5  configuration or input-data error
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, DcoxError, EXIT_CONVERGED, EXIT_NOT_CONVERGED, exit_code_for
from .model import PARTNER_VAR, ModelSpec, ingest_dataset, read_event_time_set
from .partition import DEFAULT_SEED, partition_file
from .pooled import fit_pooled
from .report import format_table, render_report
from .tables import build_bundle, failure_bundle, read_bundle, write_bundle

log = logging.getLogger("dcox")

# config keys are the run parameter names, lower-cased
_list = str.split


def _strata(text):
    return text.replace(",", " ").split()


def _int_list(text):
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"expected integers, got {text!r}") from None


# key -> (ModelSpec field, parser)
SPEC_KEYS = {
    "runid": ("run_id", str),
    "dp_cd_list": ("partner_ids", _int_list),
    "reg_ds_in": ("reg_ds_in", str),
    "dependent_vars": ("dependent_var", str),
    "independent_vars": ("independent_vars", _list),
    "censoring_var": ("censoring_var", str),
    "censoring_lev": ("censoring_level", float),
    "strata_vars": ("strata_vars", _strata),
    "ties": ("ties", str),
    "weight": ("weight_var", str),
    "freq": ("freq_var", str),
    "xconv": ("xconv", float),
    "max_iter_nb": ("max_iter", int),
    "alpha": ("alpha", float),
    "groups": ("groups", int),
    "min_count_per_grp_glob": ("min_count_per_grp_glob", int),
    "max_numb_of_grp": ("max_numb_of_grp", int),
}
RUN_KEYS = {
    "regr_type_cd": int,
    "tbl_initial_est": str,
    "tbl_events_time_set": str,
    "wait_time_min": float,
    "wait_time_max": float,
    "test_env_cd": int,
    "last_runid_in": int,
    "noint": str,
    "transport": str,
    "root": str,
    "msoc": str,
    # partner side
    "dp_cd": int,
    "data": str,
    "min_count_per_grp": int,
    "output_dir": str,
}
ALL_KEYS = {**{k: v[1] for k, v in SPEC_KEYS.items()}, **RUN_KEYS}


@dataclass
class RunConfig:
    values: dict

    def get(self, key, default=None):
        return self.values.get(key, default)


def _normalize(key: str) -> str:
    key = key.strip().lower()
    return "tbl_initial_est" if key == "tbl_intial_est" else key


def parse_config(text: str | None = None, overrides: dict | None = None) -> RunConfig:
    """``key = value`` lines (``#`` comments, also after a value) plus overrides; unknown keys raise ConfigError."""
    raw = {}
    if text:
        parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                           inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string("[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        raw.update(parser["run"])
    raw.update(overrides or {})
    values = {}
    for key, value in raw.items():
        name = _normalize(key)
        if name not in ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        value = str(value).strip()
        if value == "":
            continue
        try:
            values[name] = ALL_KEYS[name](value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return RunConfig(values)


def _read_initial_estimates(path, names):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            row = next(csv.DictReader(fh))
    except (OSError, StopIteration) as exc:
        raise ConfigError(f"cannot read initial estimates from {path}: {exc}") from None
    missing = [n for n in names if n not in row]
    if missing:
        raise ConfigError(f"initial estimates table {path} lacks columns {missing}")
    return tuple(float(row[n]) for n in names)


def spec_from_config(cfg: RunConfig) -> ModelSpec:
    if cfg.get("regr_type_cd", 10) != 10:
        raise ConfigError("only Cox regression (regr_type_cd=10) is supported")
    fields = {SPEC_KEYS[k][0]: v for k, v in cfg.values.items() if k in SPEC_KEYS}
    for required in ("dependent_var", "censoring_var", "independent_vars"):
        if required not in fields:
            raise ConfigError(f"missing required parameter for {required}")
    fields.setdefault("reg_ds_in", "")
    if cfg.get("tbl_initial_est"):
        fields["initial_estimates"] = _read_initial_estimates(cfg.get("tbl_initial_est"), fields["independent_vars"])
    return ModelSpec(**fields)


def transport_from_config(cfg: RunConfig, root_default=None):
    from .protocol.transport import TransportConfig, make_transport

    tc = TransportConfig(
        cfg.get("transport", "directory"),
        root=cfg.get("root", root_default),
        wait_time_min=cfg.get("wait_time_min", 3.0),
        wait_time_max=cfg.get("wait_time_max", 7200.0),
    )
    return make_transport(tc)


def _setup_logging(path, verbose: bool = False) -> None:
    for handler in list(log.handlers):
        log.removeHandler(handler)
        handler.close()
    log.setLevel(logging.DEBUG)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(console)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(path, encoding="utf-8")
        fh.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        log.addHandler(fh)


def _load(args) -> RunConfig:
    text = None
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    for key in ALL_KEYS:
        value = getattr(args, f"opt_{key}", None)
        if value is not None:
            overrides[key] = value
    return parse_config(text, overrides)


def _print_estimates(bundle) -> None:
    if "P_EST" in bundle.tables:
        print(format_table(*bundle.tables["P_EST"]))
    else:
        print(format_table(*bundle.tables["CONVRG_STATUS"]))


def _finish(outcome, msoc) -> int:
    bundle = build_bundle(outcome)
    write_bundle(bundle, msoc)
    _print_estimates(bundle)
    log.info("wrote %d tables to %s", len(bundle.tables), msoc)
    return EXIT_CONVERGED if outcome.fit.converged else EXIT_NOT_CONVERGED


def _guard(run, on_error=None) -> int:
    """Run a command body and map exceptions onto exit codes."""
    try:
        return run()
    except DcoxError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        if on_error is not None:
            try:
                on_error(exc)
            except DcoxError:
                pass
        return exit_code_for(exc)


# -- commands -----------------------------------------------------------------

def cmd_center(args) -> int:
    from .protocol.center import orchestrate_center

    state = {}

    def run():
        cfg = _load(args)
        spec = spec_from_config(cfg)
        state["spec"] = spec
        if cfg.get("test_env_cd", 0) == 1:
            raise ConfigError("test_env_cd=1 runs everything in one process; use the demo command")
        root = Path(cfg.get("root", args.out))
        state["msoc"] = Path(cfg.get("msoc", root / spec.run_id / "msoc"))
        _setup_logging(args.log or state["msoc"].parent / f"{spec.run_id}_center.log", args.verbose)
        transport = transport_from_config(cfg, str(root))
        grid = read_event_time_set(cfg.get("tbl_events_time_set"), spec) if cfg.get("tbl_events_time_set") else None
        outcome = orchestrate_center(spec, transport, event_time_set=grid)
        return _finish(outcome, state["msoc"])

    def mirror(exc):
        # record the failure in CONVRG_STATUS when the run got far enough to know its spec
        if "msoc" in state:
            write_bundle(failure_bundle(state["spec"], exc), state["msoc"])

    return _guard(run, mirror)


def cmd_partner(args) -> int:
    from .protocol.partner import orchestrate_partner

    def run():
        cfg = _load(args)
        for key in ("dp_cd", "data", "runid"):
            if cfg.get(key) is None:
                raise ConfigError(f"partner config needs {key}")
        k = cfg.get("dp_cd")
        root = cfg.get("root", args.out)
        _setup_logging(args.log or Path(root) / cfg.get("runid") / f"dp{k}.log", args.verbose)
        transport = transport_from_config(cfg, root)
        return orchestrate_partner(cfg.get("data"), k, transport, cfg.get("runid"),
                                   cfg.get("min_count_per_grp"), cfg.get("output_dir"))

    return _guard(run)


def cmd_pooled(args) -> int:
    def run():
        cfg = _load(args)
        spec = spec_from_config(cfg)
        data = cfg.get("data")
        if not data:
            raise ConfigError("pooled needs --data")
        msoc = Path(args.out) / "msoc"
        _setup_logging(args.log, args.verbose)
        ds = ingest_dataset(data, spec, 0)
        partner_ids = None
        if PARTNER_VAR in spec.strata_vars:
            partner_ids = [int(key[spec.strata_vars.index(PARTNER_VAR)]) for key in ds.strata]
        return _finish(fit_pooled(ds, spec, partner_ids), msoc)

    return _guard(run)


def cmd_partition(args) -> int:
    def run():
        out = Path(args.out)
        paths = [out / f"dp{k}" / Path(args.data).name for k in range(1, len(args.sizes) + 1)]
        written = partition_file(args.data, args.sizes, paths, seed=args.seed, event_var=args.event_var,
                                 censoring_level=args.censoring_lev, event_counts=args.event_counts)
        for path in written:
            print(path)
        return 0

    return _guard(run)


def cmd_report(args) -> int:
    def run():
        bundle = read_bundle(args.bundle)
        paths = render_report(bundle, args.out or args.bundle)
        print(paths["report"].read_text(encoding="utf-8"))
        return 0

    return _guard(run)


EXAMPLES = {
    1: dict(run_id="dc1", strata_vars=(), ties="BRESLOW"),
    2: dict(run_id="dc2", strata_vars=(PARTNER_VAR,), ties="EFRON"),
}


def demo_spec(example: int) -> ModelSpec:
    return ModelSpec(dependent_var="week", censoring_var="arrest", independent_vars=("fin", "age", "prio"),
                     partner_ids=(1, 2, 3), reg_ds_in="rossi", **EXAMPLES[example])


def run_demo(workdir, example: int = 1, mode: str = "loopback", seed: int = DEFAULT_SEED,
             sizes=(134, 149, 149), wait_time_min: float = 0.02, data=None):
    """Partition the bundled data, run three partners and a center, and return the outcome."""
    from .protocol.center import orchestrate_center
    from .protocol.partner import orchestrate_partner
    from .protocol.transport import TransportConfig, TransportMode, make_transport

    workdir = Path(workdir)
    spec = demo_spec(example)
    spec = ModelSpec(**{**spec.__dict__, "partner_ids": tuple(range(1, len(sizes) + 1))})
    with resources.as_file(resources.files("dcox") / "data" / "rossi.csv") as bundled:
        source = Path(data) if data else bundled
        shards = partition_file(source, sizes, [workdir / f"dp{k}" / "rossi.csv" for k in spec.partner_ids],
                                seed=seed)
    tmode = TransportMode.DIRECTORY if mode == "directory" else TransportMode.LOOPBACK
    transport = make_transport(TransportConfig(tmode, root=str(workdir / "exchange"), wait_time_min=wait_time_min,
                                               wait_time_max=60.0))
    codes = {}

    def partner(k, path):
        codes[k] = orchestrate_partner(path, k, transport, spec.run_id, output_dir=workdir / f"dp{k}" / "out")

    threads = [threading.Thread(target=partner, args=(k, p), daemon=True) for k, p in zip(spec.partner_ids, shards)]
    for t in threads:
        t.start()
    outcome = orchestrate_center(spec, transport)
    for t in threads:
        t.join()
    return outcome, codes, transport


def cmd_demo(args) -> int:
    def run():
        _setup_logging(args.log, args.verbose)
        workdir = Path(args.out)
        outcome, codes, _ = run_demo(workdir, args.example, args.transport, args.seed)
        msoc = workdir / "msoc"
        code = _finish(outcome, msoc)
        render_report(read_bundle(msoc), msoc)
        bad = {k: c for k, c in codes.items() if c != 0}
        if bad:
            log.error("partners exited with %s", bad)
        return code

    return _guard(run)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcox", description="Distributed Cox regression.",
                                     epilog="exit codes: 0 converged, 2 not converged, 3 protocol error, "
                                            "4 numeric error, 5 configuration error",
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_keys=True):
        p.add_argument("--log", help="log file path")
        p.add_argument("-v", "--verbose", action="store_true")
        if with_keys:
            p.add_argument("--config", help="key = value file of run parameters")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
            keys = p.add_argument_group("parameters (same names as the config file)")
            for key in sorted(ALL_KEYS):
                flag = "RunID" if key == "runid" else key
                keys.add_argument(f"--{flag}", dest=f"opt_{key}", metavar="V")

    p = sub.add_parser("center", help="run the analysis center")
    common(p)
    p.add_argument("--out", default=".", help="request root when no root key is given")
    p.set_defaults(func=cmd_center)

    p = sub.add_parser("partner", help="run one data partner until STOP")
    common(p)
    p.add_argument("--out", default=".", help="request root when no root key is given")
    p.set_defaults(func=cmd_partner)

    p = sub.add_parser("pooled", help="fit on a single pooled file (equivalence oracle)")
    common(p)
    p.add_argument("--out", default=".", help="tables go to OUT/msoc")
    p.set_defaults(func=cmd_pooled)

    p = sub.add_parser("partition", help="split a CSV into partner shards with a dp_cd column")
    common(p, with_keys=False)
    p.add_argument("data")
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", default=".", help="shards go to OUT/dp<k>/")
    p.add_argument("--event-var", help="event variable, needed with --event-counts")
    p.add_argument("--censoring-lev", default="0")
    p.add_argument("--event-counts", type=int, nargs="+", help="events per shard")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("report", help="render a text report and residual plot from a bundle")
    common(p, with_keys=False)
    p.add_argument("bundle", help="directory holding <RunID>_*.csv tables")
    p.add_argument("--out", help="destination (default: the bundle directory)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="partition the bundled recidivism data and run a full exchange")
    common(p, with_keys=False)
    p.add_argument("--example", type=int, choices=(1, 2), default=1,
                   help="1: no strata, Breslow; 2: strata dp_cd, Efron")
    p.add_argument("--transport", choices=("loopback", "directory"), default="loopback")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", default="dcox_demo")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
