"""Command-line entry point: ``pushrec {train,eval-polar,eval-endurance,replay,plot}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, apply_overrides, atomic_write, parse_value, read_sections
from .evaluation import (EnduranceConfig, MeanPolicy, SweepConfig, endurance_csv, endurance_eval, polar_sweep,
                         sweep_csv, write_traces)
from .neural import CheckpointError
from .ppo import CheckpointMismatch, NonFiniteError, check_interface, load_policy, load_run_config, train
from .trace import TraceError, format_table, read_trace, verify_trace

log = logging.getLogger("pushrec")

EVAL_SECTIONS = ("sweep", "endurance")


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get("PUSHREC_OUT_DIR") or "runs")


def _overrides(pairs: list[str]) -> dict[str, dict]:
    """``section.key=value`` pairs into a section dict (the split is at the last dot)."""
    out: dict[str, dict] = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.rpartition(".")
        if not sep or not dot:
            raise ConfigError(item, "expected section.key=value")
        out.setdefault(section, {})[name] = parse_value(value)
    return out


def _sections(args) -> dict[str, dict]:
    sections = read_sections(args.config) if args.config else {}
    for name, items in _overrides(args.set).items():
        sections.setdefault(name, {}).update(items)
    return sections


def _split(sections: dict) -> tuple[dict, dict]:
    run = {k: v for k, v in sections.items() if k not in EVAL_SECTIONS}
    return run, {k: sections.get(k, {}) for k in EVAL_SECTIONS}


# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    run_sections, _ = _split(_sections(args))
    model, env_cfg, cfg = load_run_config(sections=run_sections)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.steps is not None:
        cfg.total_steps = args.steps
    cfg.validate()
    out = _out_dir(args)

    def report(row):
        log.info("iter %d  steps %d  reward/step %.2f  episode %.2f s  kl %.4f",
                 row["iteration"], row["steps"], row["reward_per_step"], row["episode_seconds"], row["kl"])

    try:
        trainer = train(model, env_cfg, cfg, out, init=args.checkpoint, force=args.force, log=report)
    except NonFiniteError as exc:
        log.error("training diverged: %s (last periodic checkpoint kept in %s)", exc, out)
        return 3
    log.info("wrote %s (%d steps)", out / "final.bin", trainer.steps)
    if args.plot:
        from .plotting import plot_training

        if (out / "metrics.csv").is_file():
            log.info("wrote %s", plot_training(out / "metrics.csv", out / "training.png"))
    return 0


def _load_for_eval(args):
    ckpt = Path(args.checkpoint)
    policy, meta = load_policy(ckpt)
    sections = _sections(args) if args.config else {}
    if not args.config:
        run_ini = ckpt.parent / "run.ini"
        if run_ini.is_file():
            sections = read_sections(run_ini)
        for name, items in _overrides(args.set).items():
            sections.setdefault(name, {}).update(items)
    run_sections, eval_sections = _split(sections)
    model, env_cfg, _ = load_run_config(sections=run_sections)
    check_interface(meta, model, env_cfg, args.force)
    return policy, meta, model, env_cfg, eval_sections


def _eval_config(cls, section: dict, prefix: str, args, count_field: str):
    cfg = cls()
    apply_overrides(cfg, section, prefix)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.friction is not None:
        cfg.friction = args.friction
    if args.episodes is not None:
        setattr(cfg, count_field, args.episodes)
    cfg.__post_init__()
    return cfg


def _suffix(friction) -> str:
    return "" if friction is None else f"_mu{friction:g}"


def cmd_eval_polar(args) -> int:
    policy, meta, model, env_cfg, sections = _load_for_eval(args)
    cfg = _eval_config(SweepConfig, sections["sweep"], "sweep", args, "repetitions")
    result = polar_sweep(MeanPolicy(policy), model, cfg, env_cfg.norm, env_cfg.reward, workers=args.workers or 1,
                         record=args.traces is not None)
    out = _out_dir(args)
    path = out / f"sweep{_suffix(cfg.friction)}.csv"
    atomic_write(path, sweep_csv(result, meta.get("config_hash", "")))
    log.info("wrote %s (%d cells)", path, result.successes.size)
    for i, d in enumerate(cfg.directions):
        log.info("direction %.3f rad: %s", d, " ".join(str(int(s)) for s in result.successes[i]))
    if args.traces is not None:
        log.info("wrote %d traces to %s", write_traces(args.traces, result.episodes), args.traces)
    if args.plot:
        from .plotting import plot_sweep

        log.info("wrote %s", plot_sweep(path, path.with_suffix(".png")))
    return 0


def cmd_eval_endurance(args) -> int:
    policy, meta, model, env_cfg, sections = _load_for_eval(args)
    cfg = _eval_config(EnduranceConfig, sections["endurance"], "endurance", args, "episodes")
    if args.link:
        cfg = replace(cfg, links=tuple(args.link))
    cells = endurance_eval(MeanPolicy(policy), model, cfg, env_cfg.norm, env_cfg.reward, workers=args.workers or 1,
                           record=args.traces is not None)
    out = _out_dir(args)
    path = out / f"endurance{_suffix(cfg.friction)}.csv"
    atomic_write(path, endurance_csv(cells, cfg, meta.get("config_hash", "")))
    log.info("wrote %s (%d cells)", path, len(cells))
    if args.traces is not None:
        eps = {(c.link, c.magnitude, c.duration): c.results for c in cells}
        log.info("wrote %d traces to %s", write_traces(args.traces, eps), args.traces)
    if args.plot:
        from .plotting import plot_endurance

        log.info("wrote %s", plot_endurance(path, path.with_suffix(".png")))
    return 0


def cmd_replay(args) -> int:
    trace = read_trace(args.trace)
    if not args.verify:
        print(format_table(trace, args.every))
        return 0
    res = verify_trace(trace)
    if res.mismatches == 0:
        print(f"verified, 0 mismatches ({res.steps} steps)")
        return 0
    print(f"verification failed: {res.mismatches} mismatches, first divergent step {res.first_divergent}")
    print(res.detail)
    return 1


def cmd_plot(args) -> int:
    from .plotting import plot_any

    for csv_path in args.csv:
        out = None
        if args.out and len(args.csv) == 1 and args.out.endswith(".png"):
            out = args.out
        elif args.out:
            out = Path(args.out) / (Path(csv_path).stem + ".png")
        log.info("wrote %s", plot_any(csv_path, out))
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pushrec", description=__doc__)
    p.add_argument("--version", action="version", version=f"pushrec {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint_required: bool):
        sp.add_argument("--config", help="run config file (robot, environment, ppo, sweep/endurance sections)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help="output directory (default $PUSHREC_OUT_DIR or ./runs)")
        sp.add_argument("--checkpoint", required=checkpoint_required)
        sp.add_argument("--force", action="store_true", help="skip the checkpoint/config hash check")
        sp.add_argument("--plot", action="store_true", help="also render a PNG figure")

    t = sub.add_parser("train", help="train a policy with PPO")
    common(t, False)
    t.add_argument("--steps", type=int, help="sample budget")
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval-polar", cmd_eval_polar, "success-rate sweep over push magnitude and direction"),
                              ("eval-endurance", cmd_eval_endurance, "consecutive random pushes survived")):
        e = sub.add_parser(name, help=help_)
        common(e, True)
        e.add_argument("--friction", type=float, help="override the ground friction coefficient")
        e.add_argument("--episodes", type=int, help="repetitions per cell")
        e.add_argument("--traces", help="directory for per-episode trace files")
        if name == "eval-endurance":
            e.add_argument("--link", action="append", help="target link (repeatable): base, torso, arm, ...")
        e.set_defaults(func=func)

    r = sub.add_parser("replay", help="print or verify an episode trace")
    r.add_argument("trace")
    r.add_argument("--verify", action="store_true", help="re-simulate and compare every step")
    r.add_argument("--every", type=int, default=1, help="print every n-th step")
    r.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="render figures from sweep, endurance or metrics CSV files")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("--out", help="PNG path (single input) or directory")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 2
    except (CheckpointMismatch, CheckpointError, TraceError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
