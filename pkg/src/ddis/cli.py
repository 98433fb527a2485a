"""Command-line entry point: ``ddis <subcommand> [--config PATH] [--seed U64] [--out DIR]``.

Exit codes: 0 success, 1 validation error, 2 verification failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .errors import DDISError, FormatError
from .fields import read_ddf1, write_ddf1
from .metrics import radial_power_spectrum, spectral_error
from .operators import PairedDataset, exact_operator, fit_spectral_surrogate, POISSON, helmholtz

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="experiment config JSON")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory or file")

    p = _Parser(prog="ddis", description="Decoupled diffusion inverse solving on toy PDE problems.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("prior-sample", parents=[common], help="draw GRF coefficient fields")

    f = sub.add_parser("forward", parents=[common], help="solve the PDE for a coefficient field")
    f.add_argument("--input", type=Path, required=True, help="coefficient field (DDF1)")
    f.add_argument("--task", choices=["poisson", "helmholtz"], default=None)
    f.add_argument("--k", type=float, default=None, help="Helmholtz wavenumber")

    s = sub.add_parser("fit-surrogate", parents=[common], help="fit the diagonal spectral surrogate")
    s.add_argument("--pairs", type=Path, default=None,
                   help="directory of a_*.ddf / u_*.ddf pairs (default: generate from the config)")

    sub.add_parser("invert", parents=[common], help="run the configured inverse experiment")

    v = sub.add_parser("verify", parents=[common], help="run numerical verification suites")
    v.add_argument("which", choices=["collapse", "attenuation", "invariance", "adjoint", "all"])
    v.add_argument("--quick", action="store_true", help="reduced sample sizes (smoke test)")

    b = sub.add_parser("bench", parents=[common], help="paired-fraction x sampler sweep")
    b.add_argument("--grid", type=Path, required=True, help="bench grid JSON")

    sp = sub.add_parser("spectrum", parents=[common], help="radial power spectrum / spectral error")
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--reference", type=Path, default=None, help="truth field for the spectral error")
    sp.add_argument("--bins", type=int, default=None)
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out(args, default: str) -> Path:
    return getattr(args, "out", None) or Path(default)


def _task(args, cfg):
    kind = args.task or cfg.task
    if kind == "poisson":
        return POISSON
    return helmholtz(args.k if args.k is not None else cfg.helmholtz_k)


def _run(args) -> int:
    from . import experiments

    cmd = args.command
    if cmd == "prior-sample":
        paths = experiments.cmd_prior_sample(_config(args), _out(args, "prior_samples"))
        print(f"wrote {len(paths)} fields")
        return EXIT_OK

    if cmd == "forward":
        cfg = _config(args)
        a = read_ddf1(args.input)
        u = exact_operator(_task(args, cfg), a.grid).apply(a)
        out = _out(args, "solution.ddf")
        write_ddf1(out, u)
        print(f"wrote {out}")
        return EXIT_OK

    if cmd == "fit-surrogate":
        cfg = _config(args)
        if args.pairs is not None:
            a_files = sorted(args.pairs.glob("a_*.ddf"))
            if not a_files:
                raise FormatError(f"no a_*.ddf files in {args.pairs}")
            pairs = [(read_ddf1(p), read_ddf1(p.with_name("u_" + p.name[2:]))) for p in a_files]
        else:
            inst = experiments.make_instance(cfg, 0)
            pairs = experiments._paired(inst, cfg)
        data = PairedDataset(pairs)
        cut = cfg.surrogate.mode_cutoff or data.grid.resolution
        op = fit_spectral_surrogate(data, cut, cfg.surrogate.lambda_phys, cfg.task_spec())
        out = _out(args, "surrogate.ddf")
        op.save(out)
        print(f"wrote {out} ({len(data)} pairs)")
        return EXIT_OK

    if cmd == "invert":
        summary = experiments.cmd_invert(_config(args), _out(args, "invert_out"))
        agg = summary.aggregate()
        print(json.dumps(agg, sort_keys=True))
        return EXIT_OK if agg["n_ok"] > 0 else EXIT_INVALID

    if cmd == "verify":
        from .verify import run_verify

        ok, report = run_verify(args.which, _out(args, "verify_out"), quick=args.quick,
                                seed=getattr(args, "seed", None))
        for line in report["lines"]:
            print(line)
        return EXIT_OK if ok else EXIT_VERIFY

    if cmd == "bench":
        rows = experiments.cmd_bench(args.grid, _out(args, "bench_out"))
        for r in rows:
            print(f"{r['sampler']:>14s} pf={r['paired_fraction']:<5g} rel_l2={r['rel_l2_mean']:.4f}+-{r['rel_l2_std']:.4f}")
        return EXIT_OK

    if cmd == "spectrum":
        f = read_ddf1(args.input)
        if args.reference is not None:
            rep = spectral_error(f, read_ddf1(args.reference), args.bins)
            text = rep.to_csv()
            print(f"E_s={rep.E_s!r}")
        else:
            spec = radial_power_spectrum(f, args.bins)
            text = "k,P\n" + "".join(f"{k!r},{p!r}\n" for k, p in spec)
        out = getattr(args, "out", None)
        if out is not None:
            Path(out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK

    raise AssertionError(cmd)  # pragma: no cover


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DDISError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
