"""Command-line front end: ``dtgof {estimate,test,critval,simulate}``.

Exit codes: 0 success, 2 usage error, 3 data validation or I/O error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .critval import CovarianceMode, GridSpec, critical_value, decide
from .datagen import LIFETIMES, SimulationConfig, sample_latent, truncate
from .errors import DtgofError, NumericalError, ValidationError
from .estimation import EstimateResult, estimate
from .geometry import ObservationSet, StudyWindow, in_support
from .ksstat import ks_statistic
from .model import Copula, ModelParams

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_LEVELS = (0.90, 0.95, 0.99)


class StageError(Exception):
    """Wraps a package error with the pipeline stage it came from."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


def _stage(name: str, timings: dict, fn, *args, **kw):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kw)
    except DtgofError as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


# --- argument parsing --------------------------------------------------------

def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be finite and > 0: {text!r}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return v


def _levels(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list: {text!r}") from None
    if not vals or not all(0.0 < v < 1.0 for v in vals):
        raise argparse.ArgumentTypeError("levels must lie in (0, 1)")
    return tuple(sorted(set(vals)))


def _mode(text: str) -> CovarianceMode:
    try:
        return CovarianceMode.parse(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_window(p: argparse.ArgumentParser) -> None:
    p.add_argument("--G", dest="G", type=_positive_float, required=True, help="birth window length")
    p.add_argument("--s", dest="s", type=_positive_float, required=True, help="study duration")


def _add_copula(p: argparse.ArgumentParser) -> None:
    p.add_argument("--copula", choices=[c.value for c in Copula], default="fgm")


def _add_grid(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--grid-step", type=_positive_float, default=0.25)
    p.add_argument("--grid-cap", type=_positive_int, default=20_000)
    p.add_argument("--reps", type=_positive_int, default=1000)
    p.add_argument("--seed", type=_seed, required=seed_required)
    p.add_argument("--levels", type=_levels, default=DEFAULT_LEVELS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtgof",
        description="KS goodness-of-fit test for doubly truncated data under a product or FGM copula.",
    )
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="cap the number of BLAS threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the model parameters from a CSV sample")
    p.add_argument("input", type=Path)
    _add_copula(p)
    _add_window(p)
    p.add_argument("--drop-invalid", action="store_true", help="skip rows outside D instead of failing")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("test", help="estimate, compute the statistic and critical values, decide")
    p.add_argument("input", type=Path)
    _add_copula(p)
    _add_window(p)
    _add_grid(p, seed_required=True)
    p.add_argument("--mode", type=_mode, default=CovarianceMode.EST_BOTH,
                   help="limit process: known-both, est-theta, known-theta, est-both")
    p.add_argument("--drop-invalid", action="store_true")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("critval", help="critical values for given parameters")
    _add_copula(p)
    _add_window(p)
    p.add_argument("--theta", type=_positive_float, required=True)
    p.add_argument("--vartheta", type=float, default=0.0)
    _add_grid(p, seed_required=True)
    p.add_argument("--mode", type=_mode, default=CovarianceMode.EST_BOTH)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("simulate", help="write a synthetic truncated sample")
    _add_copula(p)
    _add_window(p)
    p.add_argument("--theta", type=_positive_float, required=True)
    p.add_argument("--vartheta", type=float, default=0.0)
    p.add_argument("--latent-n", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--lifetime", choices=LIFETIMES, default="exponential")
    p.add_argument("--out", type=Path, required=True)
    return parser


# --- data files --------------------------------------------------------------

def read_observations(path: Path, window: StudyWindow, drop_invalid: bool = False) -> ObservationSet:
    """Read a UTF-8 CSV with header ``x,t``.

    Row numbers in messages are file line numbers.
    """
    xs: list[float] = []
    ts: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, expected header 'x,t'") from None
        cols = [h.strip().lower() for h in header]
        if "x" not in cols or "t" not in cols:
            raise ValidationError(f"{path}: line 1: header must name columns 'x' and 't', got {header}")
        jx, jt = cols.index("x"), cols.index("t")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                x, t = float(row[jx]), float(row[jt])
            except (ValueError, IndexError):
                raise ValidationError(f"{path}: line {line}: cannot parse {row}") from None
            if not (math.isfinite(x) and math.isfinite(t)):
                raise ValidationError(f"{path}: line {line}: non-finite value in {row}")
            if not in_support(window, x, t):
                if drop_invalid:
                    continue
                raise ValidationError(
                    f"{path}: line {line}: observation ({x}, {t}) lies outside D "
                    f"(0 < t <= x <= t + s, t <= G with G={window.G}, s={window.s})")
            xs.append(x)
            ts.append(t)
    if not xs:
        raise ValidationError(f"{path}: empty sample")
    return ObservationSet(np.array(xs), np.array(ts), window)


def write_observations(path: Path, obs: ObservationSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "t"])
        for x, t in zip(obs.x, obs.t):
            wr.writerow([format(x, ".17g"), format(t, ".17g")])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _params_dict(p: ModelParams) -> dict:
    return {"copula": p.copula.value, "theta": p.theta, "vartheta": p.vartheta}


def _finite_or_none(v: float):
    return v if math.isfinite(v) else None


# --- commands ----------------------------------------------------------------

def _estimate_payload(res: EstimateResult, m: int) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": "estimate", "params": _params_dict(res.params),
            "alpha": res.alpha, "m": m, "latent_n": res.latent_n,
            "score_norm": res.score_norm, "iterations": res.iterations}


def cmd_estimate(args) -> int:
    w = StudyWindow(args.G, args.s)
    timings: dict = {}
    obs = _stage("read", timings, read_observations, args.input, w, args.drop_invalid)
    res = _stage("estimate", timings, estimate, obs, args.copula)
    p = res.params
    print(f"copula      {p.copula.value}")
    print(f"theta       {p.theta:.10g}")
    if p.copula is Copula.FGM:
        print(f"vartheta    {p.vartheta:.10g}")
    print(f"alpha       {res.alpha:.10g}")
    print(f"m           {obs.m}")
    print(f"latent_n    {res.latent_n:.10g}")
    print(f"score_norm  {res.score_norm:.3e}  ({res.iterations} iterations)")
    if args.out:
        _write_json(args.out, _estimate_payload(res, obs.m))
    return EXIT_OK


def _critval_lines(cv) -> list[str]:
    return [f"  {lv:<6g} {q:.6f}" for lv, q in cv.quantiles.items()]


def cmd_test(args) -> int:
    w = StudyWindow(args.G, args.s)
    grid = GridSpec(args.grid_step, args.grid_cap)
    timings: dict = {}
    obs = _stage("read", timings, read_observations, args.input, w, args.drop_invalid)
    res = _stage("estimate", timings, estimate, obs, args.copula)
    st = _stage("statistic", timings, ks_statistic, obs, res.params)
    cv = _stage("critical_value", timings, critical_value, res.params, w, grid, args.mode,
                args.levels, args.reps, args.seed)
    decisions = {lv: decide(st.statistic, q).value for lv, q in cv.quantiles.items()}
    p = res.params
    print(f"copula {p.copula.value}  theta {p.theta:.8g}  vartheta {p.vartheta:.8g}")
    print(f"m {obs.m}  alpha {res.alpha:.6g}  latent_n {res.latent_n:.6g}")
    print("deltas " + "  ".join(f"d{k + 1}={v:.6g}" for k, v in enumerate(st.deltas)))
    print(f"statistic {st.statistic:.6f}  ({st.evaluation_count} evaluations)")
    print(f"critical values ({cv.mode.value}, step {grid.step}, reps {cv.reps}, seed {cv.seed}):")
    for lv, q in cv.quantiles.items():
        print(f"  {lv:<6g} {q:.6f}  {decisions[lv]}")
    if args.out:
        payload = {
            "schema_version": SCHEMA_VERSION, "kind": "test",
            "params": _params_dict(p), "alpha": res.alpha, "m": obs.m, "latent_n": res.latent_n,
            "statistic": {"deltas": [_finite_or_none(d) for d in st.deltas],
                          "value": st.statistic, "evaluation_count": st.evaluation_count},
            "mode": cv.mode.value,
            "critical_values": {str(lv): q for lv, q in cv.quantiles.items()},
            "decisions": {str(lv): d for lv, d in decisions.items()},
            "grid_step": grid.step, "reps": cv.reps, "seed": cv.seed,
            "jitter_used": cv.jitter_used, "grid_points": cv.n_points,
            "timings": timings,
        }
        _write_json(args.out, payload)
    return EXIT_OK


def _cli_params(args) -> ModelParams:
    copula = Copula.parse(args.copula)
    if copula is Copula.PRODUCT and args.vartheta != 0.0:
        raise ValidationError("--vartheta must be 0 with --copula product")
    return ModelParams(copula, args.theta, args.vartheta)


def cmd_critval(args) -> int:
    w = StudyWindow(args.G, args.s)
    params = _cli_params(args)
    grid = GridSpec(args.grid_step, args.grid_cap)
    timings: dict = {}
    cv = _stage("critical_value", timings, critical_value, params, w, grid, args.mode,
                args.levels, args.reps, args.seed)
    print(f"critical values ({cv.mode.value}, step {grid.step}, reps {cv.reps}, seed {cv.seed}):")
    print("\n".join(_critval_lines(cv)))
    if args.out:
        _write_json(args.out, {
            "schema_version": SCHEMA_VERSION, "kind": "critval", "params": _params_dict(params),
            "mode": cv.mode.value, "critical_values": {str(lv): q for lv, q in cv.quantiles.items()},
            "grid_step": grid.step, "reps": cv.reps, "seed": cv.seed,
            "jitter_used": cv.jitter_used, "grid_points": cv.n_points, "timings": timings,
        })
    return EXIT_OK


def cmd_simulate(args) -> int:
    w = StudyWindow(args.G, args.s)
    params = _cli_params(args)
    cfg = SimulationConfig(params, w, args.latent_n, args.seed, lifetime=args.lifetime)
    obs = truncate(sample_latent(cfg), w)
    write_observations(args.out, obs)
    meta = {"schema_version": SCHEMA_VERSION, "kind": "simulate", "params": _params_dict(params),
            "G": w.G, "s": w.s, "lifetime": args.lifetime, "seed": args.seed,
            "latent_n": args.latent_n, "m": obs.m}
    _write_json(sidecar_path(args.out), meta)
    print(f"wrote {obs.m} observations to {args.out}")
    return EXIT_OK


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


COMMANDS = {"estimate": cmd_estimate, "test": cmd_test, "critval": cmd_critval, "simulate": cmd_simulate}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    return EXIT_DATA


def _available_cpus() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        from threadpoolctl import threadpool_limits
        # OpenBLAS can crash when asked for more threads than it sized buffers for
        ctx = threadpool_limits(limits=min(args.threads, _available_cpus()))
    else:
        ctx = nullcontext()
    try:
        with ctx:
            return COMMANDS[args.command](args)
    except StageError as err:
        print(f"error [{err.stage}]: {err.exc}", file=sys.stderr)
        return _exit_code(err.exc)
    except DtgofError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
