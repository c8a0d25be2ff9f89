"""Command-line entry point.

Exit codes::

    0  success
    1  usage error
    2  invalid input file, spec or config
    3  extraction failure (empty mask, all gaps, envelope mismatch)
    4  degenerate image or histogram
    5  analysis failure (signal too short, too few peaks, ...)
    6  network failure
    7  authentication failure
"""

from __future__ import annotations

import argparse
import getpass
import json
import logging
import os
import sys

from . import __version__
from .analysis import AnalysisReport, RPeakSet, analyze, default_filter_chain
from .errors import AnalysisError, EcgScanError, InputError, InvalidSpec, TooFewPeaks, Unauthorized
from .extraction import CalibratedSignal
from .imaging import encode_png, read_image

log = logging.getLogger("ecgscan")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
DEFAULT_SERVER = "http://127.0.0.1:8080"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(path, data):
    """Write bytes or text to ``path``, or to stdout when path is None or '-'."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _read_json(path, error=InputError):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise error(f"{path} is not valid JSON: {exc}") from exc


def _load_config(args):
    if not args.config:
        return {}
    cfg = _read_json(args.config)
    if not isinstance(cfg, dict):
        raise InputError("config file must hold a JSON object")
    return cfg


def _section(args, name):
    section = args.config_data.get(name, {})
    if not isinstance(section, dict):
        raise InputError(f"config section {name!r} must be an object")
    return dict(section)


# -- pipeline ---------------------------------------------------------------

_PIPELINE_FLAGS = {
    "deskew": "deskew",
    "skew_half_range": "skew_half_range",
    "skew_step": "skew_step",
    "crop": "crop",
    "threshold": "threshold",
    "se_length": "se_length",
    "angle_step": "angle_step",
    "gap_strategy": "gap_strategy",
    "trace_height_px": "trace_height_px",
    "physical_height_cm": "physical_height_cm",
    "gain": "gain_mm_per_mV",
    "paper_speed": "paper_speed_mm_per_s",
    "baseline_row": "baseline_row_px",
    "lead_label": "lead_label",
}


def _add_pipeline_flags(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--deskew", dest="deskew", action="store_true", default=None)
    g.add_argument("--no-deskew", dest="deskew", action="store_false")
    g.add_argument("--skew-half-range", type=float)
    g.add_argument("--skew-step", type=float)
    g.add_argument("--crop", metavar="X,Y,W,H", help="crop rectangle applied after deskew")
    g.add_argument("--threshold", type=int, help="fixed binarisation threshold instead of Otsu")
    g.add_argument("--se-length", type=int)
    g.add_argument("--angle-step", type=float)
    g.add_argument("--gap-strategy", choices=("repeat_previous", "linear_interpolate"))
    g.add_argument("--trace-height-px", type=float, help="pixel height of the calibrated strip")
    g.add_argument("--physical-height-cm", type=float)
    g.add_argument("--gain", type=float, help="mm per mV")
    g.add_argument("--paper-speed", type=float, help="mm per s")
    g.add_argument("--baseline-row", type=float, help="0 mV row in pixels (default: median row)")
    g.add_argument("--lead-label")


def _pipeline_dict(args):
    cfg = _section(args, "pipeline")
    for flag, key in _PIPELINE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _pipeline_config(args):
    from .pipeline import PipelineConfig

    return PipelineConfig.from_dict(_pipeline_dict(args))


def cmd_digitize(args):
    from .pipeline import digitize, render_overlay

    config = _pipeline_config(args)
    image = read_image(args.image)
    result = digitize(image, config, source_id=os.path.basename(args.image))
    log.info("skew %.2f deg, threshold %d, %d samples", result.skew_angle, result.threshold,
             len(result.signal.samples))
    _write(args.output, result.signal.to_json() + "\n")
    if args.csv:
        _write(args.csv, result.signal.to_csv())
    if args.mask:
        _write(args.mask, encode_png(~result.mask.mask))
    if args.overlay:
        _write(args.overlay, encode_png(render_overlay(image, result, config)))
    return EXIT_OK


def _load_signal(path):
    with open(path, encoding="utf-8") as fh:
        return CalibratedSignal.from_json(fh.read())


def _summary_table(report):
    hr = "n/a" if report.heart_rate_bpm is None else f"{report.heart_rate_bpm:.2f}"
    sd = "n/a" if report.rr_std_ms is None else f"{report.rr_std_ms:.2f}"
    lines = [f"R-peaks        {len(report.r_peaks)}",
             f"heart rate     {hr} bpm",
             f"RR SD          {sd} ms"]
    if report.fiducials:
        for lab in "pqst":
            found = sum(1 for b in report.fiducials if getattr(b, f"{lab}_idx") is not None)
            lines.append(f"{lab.upper()} waves        {found}/{len(report.fiducials)}")
    return "\n".join(lines) + "\n"


def cmd_analyze(args):
    from .pipeline import PipelineConfig

    sig = _load_signal(args.signal)
    pcfg = _section(args, "pipeline")
    config = PipelineConfig.from_dict({k: v for k, v in pcfg.items()
                                       if k in ("filter_chain", "pan_tompkins")})
    code = EXIT_OK
    try:
        report = analyze(sig, config.filter_chain, config.pan_tompkins)
    except TooFewPeaks as exc:
        report, code = exc.report, exc.exit_code
        print(f"error [analysis]: {exc}", file=sys.stderr)
    except AnalysisError as exc:
        chain = config.filter_chain or default_filter_chain(sig.fs)
        report = AnalysisReport(RPeakSet([], sig.sample_period, sig.source_id), None, None, [], chain)
        code = exc.exit_code
        print(f"error [analysis]: {exc}", file=sys.stderr)
    _write(args.output, _dump(report.to_dict()))
    table = _summary_table(report)
    if args.output in (None, "-"):
        sys.stderr.write(table)
    else:
        sys.stdout.write(table)
    return code


# -- evaluation -------------------------------------------------------------

def _load_corpus_file(path, seed):
    from .evaluation import load_corpus

    obj = _read_json(path, InvalidSpec)
    if isinstance(obj, dict) and "spec" not in obj:
        obj = [{"spec": obj}]
    elif isinstance(obj, dict):
        obj = [obj]
    if seed is not None and isinstance(obj, list):
        obj = [dict(e, seed=e.get("seed", seed + k)) if isinstance(e, dict) else e
               for k, e in enumerate(obj)]
    return load_corpus(obj)


def cmd_synth(args):
    from .evaluation import render_synthetic_trace

    corpus = _load_corpus_file(args.spec, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = []
    for item in corpus:
        image, truth = render_synthetic_trace(item.spec, item.seed, source_id=item.name)
        png = os.path.join(args.out_dir, f"{item.name}.png")
        _write(png, encode_png(image))
        _write(os.path.join(args.out_dir, f"{item.name}.truth.json"), _dump(truth.to_dict()))
        manifest.append(item.to_dict())
        log.info("wrote %s", png)
    _write(os.path.join(args.out_dir, "corpus.json"), _dump(manifest))
    print(f"{len(corpus)} traces written to {args.out_dir}")
    return EXIT_OK


def cmd_evaluate(args):
    from .evaluation import EvaluationConfig, evaluate_pipeline, format_report

    corpus = _load_corpus_file(args.corpus, args.seed)
    ecfg = _section(args, "evaluation")
    ecfg["pipeline"] = {k: v for k, v in _pipeline_dict(args).items()
                        if k not in ("deskew", "trace_height_px")}
    if args.deskew is not None:
        ecfg["deskew"] = args.deskew
    if args.rmse_bound is not None:
        ecfg["rmse_bound_mV"] = args.rmse_bound
    try:
        config = EvaluationConfig(**ecfg)
    except TypeError as exc:
        raise InputError(f"bad evaluation config: {exc}") from exc
    report = evaluate_pipeline(corpus, config, n_jobs=args.jobs)
    _write(args.output, _dump(report))
    table = format_report(report) + "\n"
    if args.output in (None, "-"):
        sys.stderr.write(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


# -- service ----------------------------------------------------------------

def _server_config(args):
    """Defaults, then EHEALTH_* environment, then the config file, then flags."""
    from .cloudstore import ServerConfig

    overrides = {k: v for k, v in _section(args, "server").items()}
    for key in ("port", "host", "data_dir", "token_ttl_hours"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "credentials", None) is not None:
        overrides["credentials_path"] = args.credentials
    unknown = set(overrides) - {"port", "host", "data_dir", "token_ttl_hours", "credentials_path"}
    if unknown:
        raise InputError(f"unknown server config keys: {sorted(unknown)}")
    return ServerConfig.from_env(**overrides)


def cmd_serve(args):
    from .cloudstore import make_server

    cfg = _server_config(args)
    server = make_server(cfg)
    print(f"serving traces from {os.path.abspath(cfg.data_dir)} on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _password(args, prompt="password: "):
    if getattr(args, "password_stdin", False):
        return sys.stdin.readline().rstrip("\n")
    if getattr(args, "password", None):
        return args.password
    env = os.environ.get("EHEALTH_PASSWORD")
    if env:
        return env
    return getpass.getpass(prompt)


def cmd_adduser(args):
    from .cloudstore import CredentialStore

    cfg = _server_config(args)
    store = CredentialStore(cfg.credentials)
    store.add_user(args.username, _password(args))
    print(f"user {args.username!r} added to {cfg.credentials}")
    return EXIT_OK


def _token_file(args):
    from .cloudstore.client import default_token_path

    return args.token_file or default_token_path()


def _server_url(args, cached):
    if args.server:
        return args.server
    if os.environ.get("EHEALTH_SERVER"):
        return os.environ["EHEALTH_SERVER"]
    if cached and cached.get("server"):
        return cached["server"]
    return _section(args, "client").get("server", DEFAULT_SERVER)


def _login(args, server, username, password):
    from .cloudstore.client import TraceClient, save_token

    client = TraceClient(server, timeout=args.timeout)
    body = client.login(username, password)
    save_token(_token_file(args), server, username, body["token"], body["expires_at"])
    return client


def cmd_login(args):
    from .cloudstore.client import load_token

    cached = load_token(_token_file(args))
    server = _server_url(args, cached)
    username = args.username or os.environ.get("EHEALTH_USERNAME")
    if not username:
        raise InputError("a username is required (--username or EHEALTH_USERNAME)")
    _login(args, server, username, _password(args))
    print(f"logged in to {server} as {username}")
    return EXIT_OK


def _with_client(args, action):
    """Run ``action(client)`` with the cached token, re-logging in once on 401."""
    from .cloudstore.client import TraceClient, load_token

    cached = load_token(_token_file(args))
    server = _server_url(args, cached)
    token = cached.get("token") if cached and cached.get("server") == server else None
    client = TraceClient(server, token=token, timeout=args.timeout)
    try:
        return action(client)
    except Unauthorized:
        username = args.username or os.environ.get("EHEALTH_USERNAME") or (cached or {}).get("username")
        password = args.password or os.environ.get("EHEALTH_PASSWORD")
        if not username or not password:
            raise
        log.info("token rejected; logging in again as %s", username)
        try:
            client = _login(args, server, username, password)
        except EcgScanError as exc:
            raise Unauthorized(f"token rejected and re-login failed: {exc}") from exc
        return action(client)


def cmd_upload(args):
    from .cloudstore import TraceRecord

    sig = _load_signal(args.signal)
    record = TraceRecord(patient_ref=args.patient_ref, lead_label=args.lead_label or sig.lead_label,
                         signal=sig, source_image_ref=args.source_image_ref)
    record_id = _with_client(args, lambda c: c.upload(record))
    print(record_id)
    return EXIT_OK


def cmd_fetch(args):
    body = _with_client(args, lambda c: c.fetch_bytes(args.id))
    _write(args.output, body)
    return EXIT_OK


def cmd_list(args):
    rows = _with_client(args, lambda c: c.list(args.patient_ref))
    if args.json:
        sys.stdout.write(_dump(rows))
        return EXIT_OK
    print(f"{'id':<10}{'patient':<16}{'lead':<6}{'created':<29}{'bpm':>8}")
    for r in rows:
        hr = "" if r["heart_rate_bpm"] is None else f"{r['heart_rate_bpm']:.1f}"
        print(f"{r['id']:<10}{r['patient_ref']:<16}{r['lead_label']:<6}{r['created_at']:<29}{hr:>8}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_server_flags(p, client=False):
    if client:
        p.add_argument("--server", help=f"service URL (default: cached login or {DEFAULT_SERVER})")
        p.add_argument("--token-file", help="token cache (default: ~/.config/ecgscan/token.json)")
        p.add_argument("--username")
        p.add_argument("--password")
        p.add_argument("--timeout", type=float, default=30.0)
    else:
        p.add_argument("--data-dir")
        p.add_argument("--credentials", help="credentials file (default: <data-dir>/credentials.json)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON config file with optional pipeline/evaluation/server/client sections")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = _Parser(prog="ecgscan", description="Digitise and analyse photographed ECG traces.",
                     parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("digitize", parents=[common], help="photograph -> calibrated signal JSON")
    p.add_argument("image")
    p.add_argument("-o", "--output", help="signal JSON path (default: stdout)")
    p.add_argument("--overlay", help="write the extracted trace drawn over the photograph (PNG)")
    p.add_argument("--csv", help="also write the signal as CSV")
    p.add_argument("--mask", help="also write the cleaned binary mask (PNG)")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_digitize)

    p = sub.add_parser("analyze", parents=[common], help="signal JSON -> analysis report JSON")
    p.add_argument("signal")
    p.add_argument("-o", "--output", help="report JSON path (default: stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", parents=[common], help="render synthetic traces from a spec or corpus")
    p.add_argument("spec")
    p.add_argument("-o", "--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", parents=[common], help="score the pipeline on a synthetic corpus")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", help="report JSON path (default: stdout)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--rmse-bound", type=float)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", parents=[common], help="run the trace storage service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--token-ttl-hours", type=float)
    _add_server_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("adduser", parents=[common], help="create or reset a service account")
    p.add_argument("username")
    p.add_argument("--password")
    p.add_argument("--password-stdin", action="store_true")
    _add_server_flags(p)
    p.set_defaults(func=cmd_adduser)

    p = sub.add_parser("login", parents=[common], help="log in and cache a token")
    _add_server_flags(p, client=True)
    p.add_argument("--password-stdin", action="store_true")
    p.set_defaults(func=cmd_login)

    p = sub.add_parser("upload", parents=[common], help="upload a signal JSON as a trace record")
    p.add_argument("signal")
    p.add_argument("--patient-ref", required=True)
    p.add_argument("--lead-label")
    p.add_argument("--source-image-ref")
    _add_server_flags(p, client=True)
    p.set_defaults(func=cmd_upload)

    p = sub.add_parser("fetch", parents=[common], help="download a trace record by id")
    p.add_argument("id")
    p.add_argument("-o", "--output", help="output path (default: stdout)")
    _add_server_flags(p, client=True)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("list", parents=[common], help="list stored trace summaries")
    p.add_argument("--patient-ref")
    p.add_argument("--json", action="store_true")
    _add_server_flags(p, client=True)
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    for name, default in (("config", None), ("seed", None), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.config_data = _load_config(args)
        return args.func(args)
    except EcgScanError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
