"""``vpfmu`` command line: pack, inspect and run FMUs that front a virtual platform."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness, packager, refvp
from .modeldesc import ModelDescriptionError, serialize
from .native import BuildError, build_library, host_platform, library_extension

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _pair(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key or not value:
        raise argparse.ArgumentTypeError(f"expected A=B, got {text!r}")
    return key, value


def _port(text: str) -> int:
    port = int(text)
    if not 1 <= port <= 65535:
        raise argparse.ArgumentTypeError(f"port {port} outside 1..65535")
    return port


def cmd_pack(args) -> int:
    out = packager.pack(args.md, dict(args.lib), args.vp, args.resource, args.out)
    print(out)
    return 0


def cmd_inspect(args) -> int:
    print(packager.inspect(args.fmu).render())
    return 0


def cmd_run(args) -> int:
    verdict = harness.run(args.scenario, args.trace, fmu=args.fmu, md_path=args.md,
                          host=args.host, port=args.port, via_library=args.library)
    print(verdict.render())
    print(f"trace {args.trace}")
    if not args.no_plot:
        from .plotting import plot_trace
        png = Path(args.plot) if args.plot else Path(args.trace).with_suffix(".png")
        plot_trace(args.trace, png)
        print(f"figure {png}")
    return EXIT_PASS if verdict.passed else EXIT_FAIL


def cmd_scenario(args) -> int:
    if args.kind == "hysteresis":
        sc = harness.hysteresis_scenario(args.step_size, args.duration)
    else:
        sc = harness.constant_scenario(args.temp, args.step_size, args.duration)
    sc.save(args.out)
    print(args.out)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_trace
    print(plot_trace(args.trace, args.out))
    return 0


def cmd_build_lib(args) -> int:
    print(build_library(args.out))
    return 0


def cmd_demo(args) -> int:
    """Write the reference model, VP launcher and shim, and pack both FMU flavours."""
    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    plat = host_platform()
    lib = build_library(out / f"myVP{library_extension(plat)}")
    vp = refvp.write_launcher(out / "vp")
    md = out / "myVP.xml"
    md.write_bytes(serialize(refvp.reference_model_description(port=args.port)))
    md_remote = out / "myVP-remote.xml"
    md_remote.write_bytes(serialize(refvp.reference_model_description(
        port=args.port, executable=None)))
    print(packager.pack(md, {plat: lib}, vp, out=out / "myVP.fmu"))
    print(packager.pack(md_remote, {plat: lib}, out=out / "myVP-remote.fmu"))
    for name, sc in (("hysteresis.csv", harness.hysteresis_scenario()),
                     ("constant.csv", harness.constant_scenario())):
        print(sc.save(out / name))
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpfmu", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pack", help="assemble an FMU archive")
    s.add_argument("--md", required=True)
    s.add_argument("--lib", type=_pair, action="append", default=[], metavar="PLATFORM=FILE")
    s.add_argument("--vp")
    s.add_argument("--resource", type=_pair, action="append", default=[], metavar="SRC=DST")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("inspect", help="list and re-validate an FMU")
    s.add_argument("fmu")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("run", help="run a scenario, write the trace and a figure")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--fmu")
    src.add_argument("--md")
    s.add_argument("--scenario", required=True)
    s.add_argument("--trace", required=True)
    s.add_argument("--host", help="attach to a running VP instead of spawning one")
    s.add_argument("--port", type=_port)
    s.add_argument("--library", action="store_true",
                   help="load the FMU's shared library and call its fmi3* symbols")
    s.add_argument("--plot", help="figure path (default: trace path with .png)")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("scenario", help="write a canned scenario file")
    s.add_argument("kind", choices=["hysteresis", "constant"])
    s.add_argument("--out", required=True)
    s.add_argument("--step-size", type=float, default=0.01)
    s.add_argument("--duration", type=float, default=20.0)
    s.add_argument("--temp", type=float, default=10.0)
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("plot", help="render a trace file")
    s.add_argument("trace")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("build-lib", help="compile the fmi3 shared library")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_lib)

    s = sub.add_parser("demo", help="build the reference FMUs and scenarios into a directory")
    s.add_argument("dir")
    s.add_argument("--port", type=_port, default=8888)
    s.set_defaults(func=cmd_demo)

    s = sub.add_parser("vp", add_help=False, help="start the reference VP (see vpfmu-vp -h)")
    s.set_defaults(func=None)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv[:1] == ["vp"]:
        return refvp.main(argv[1:])
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except harness.HarnessError as e:
        print(f"vpfmu: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (packager.PackagerError, ModelDescriptionError, BuildError, OSError) as e:
        print(f"vpfmu: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
