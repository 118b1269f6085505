"""Command-line front end: ``generate``, ``run`` and ``masks-export``."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import control, metrics, pipeline, sim
from .aec import NumericFault
from .frames import ConfigurationError, FrameConfig

OUT_ENV = "JOINTAEC_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "jointaec_out"))


def parse_seeds(text: str) -> list[int]:
    """``"0-4,7,9"`` -> ``[0, 1, 2, 3, 4, 7, 9]``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigurationError(f"bad seed list entry {part!r}") from None
    if not seeds:
        raise ConfigurationError("empty seed list")
    return seeds


def parse_taps(text: str) -> tuple[str, ...]:
    taps = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in taps if t not in pipeline.TAPS]
    if bad or not taps:
        raise ConfigurationError(f"taps must be drawn from {pipeline.TAPS}, got {text!r}")
    return taps


def scenario_name(seed: int) -> str:
    return f"scenario_{seed:04d}"


# --------------------------------------------------------------------------- generate


def cmd_generate(seeds, out_dir, duration_s: float = 10.0, channels: int = 4) -> list[Path]:
    out = Path(out_dir)
    dirs = []
    for seed in seeds:
        spec = sim.sample_scenario(seed, channels=channels, duration_s=duration_s)
        scene = sim.synthesize_scene(spec)
        dirs.append(sim.save_scene(scene, out / scenario_name(seed)))
    return dirs


# --------------------------------------------------------------------------- run


@dataclass
class RunConfig:
    scenarios: list = field(default_factory=list)  # scenario directories
    seeds: list = field(default_factory=list)  # simulated in memory
    provider: str = "oracle"
    taps: tuple = pipeline.TAPS
    out_dir: Path = None
    jobs: int = 1
    aec_init: str = "auto"  # auto | zero | oracle
    frame_shift: int = 1024
    params: pipeline.Params = None  # recursion constants and regularizers
    plots: bool = True

    def validate(self) -> None:
        if not self.scenarios and not self.seeds:
            raise ConfigurationError("no scenarios given")
        if self.aec_init not in ("auto", "zero", "oracle"):
            raise ConfigurationError(f"unknown AEC init {self.aec_init!r}")
        if self.jobs < 1:
            raise ConfigurationError("--jobs must be positive")
        kind = self.provider.partition(":")[0]
        if kind not in ("oracle", "oracle-direct", "constant", "file"):
            raise ConfigurationError(f"unknown provider {self.provider!r}")


@dataclass
class ScenarioResult:
    scenario_id: str
    report: metrics.MetricReport
    block_times: np.ndarray
    out_dir: Path


@dataclass
class RunResult:
    results: list
    summary: dict

    @property
    def block_times(self) -> np.ndarray:
        if not self.results:
            return np.zeros(0)
        return np.concatenate([r.block_times for r in self.results])


def _load(item) -> tuple[str, sim.SceneSignals]:
    if isinstance(item, int):
        return scenario_name(item), sim.synthesize_scene(sim.sample_scenario(item))
    path = Path(item)
    return path.name, sim.load_scene(path)


def _provider_for(spec: str, config: FrameConfig, scenario_id: str, n_blocks: int):
    kind, _, arg = spec.partition(":")
    if kind == "file" and Path(arg).is_dir():
        spec = f"file:{Path(arg) / (scenario_id + '.efmk')}"
    return control.parse_provider(spec, config, n_blocks)


def _aec_state(cfg: RunConfig, provider, config: FrameConfig, scene: sim.SceneSignals):
    init = cfg.aec_init
    if init == "auto":
        init = "oracle" if isinstance(provider, control.OracleMaskProvider) else "zero"
    if init == "oracle":
        return control.oracle_aec_state(config, scene.h)
    return None


def run_scene(cfg: RunConfig, scenario_id: str, scene: sim.SceneSignals, record_masks: bool = False):
    config = FrameConfig(frame_shift=cfg.frame_shift, channels=scene.d.shape[0], sample_rate=scene.sample_rate)
    n_blocks = config.num_blocks(scene.x.shape[-1])
    provider = _provider_for(cfg.provider, config, scenario_id, n_blocks)
    state = _aec_state(cfg, provider, config, scene)
    return pipeline.process_stream(scene.x, scene.y, config, provider, components=scene.components,
                                   aec_state=state, params=cfg.params, record_masks=record_masks)


def _run_one(args) -> ScenarioResult:
    cfg, item = args
    scenario_id, scene = _load(item)
    out = run_scene(cfg, scenario_id, scene)
    fs = scene.sample_rate
    n = len(out.u_pf)
    report = metrics.evaluate(scenario_id, scene.d[0, :n], scene.n[0, :n], scene.s_ref[:n],
                              {t: out.component_outputs[t] for t in cfg.taps}, scene.onset)
    sdir = Path(cfg.out_dir) / scenario_id
    sdir.mkdir(parents=True, exist_ok=True)
    sim.write_wav(sdir / "u_bf.wav", out.u_bf, fs)
    sim.write_wav(sdir / "u_pf.wav", out.u_pf, fs)
    sim.write_wav(sdir / "e1.wav", out.e_first_mic, fs)
    for tap in cfg.taps:
        for comp, sig in out.component_outputs[tap].items():
            sim.write_wav(sdir / f"{tap}_{comp}.wav", sig, fs)
        metrics.write_erle_csv(sdir / f"erle_{tap}.csv", report.erle_curves[tap])
    metrics.write_metrics_csv(sdir / "metrics.csv", [report])
    if cfg.plots:
        from .plotting import plot_erle

        plot_erle(sdir / "erle.png", report.erle_curves, fs, scene.onset, scenario_id)
    # curves travel back for the averaged figure; keep them compact
    report.erle_curves = {k: v.astype(np.float32) for k, v in report.erle_curves.items()}
    return ScenarioResult(scenario_id, report, out.block_times, sdir)


def format_summary(summary: dict, taps) -> str:
    lines = [f"{'tap':<11}{'phase':<8}{'E/dB':>8}{'N/dB':>8}{'I/dB':>8}{'SDR/dB':>9}"]
    for tap in taps:
        for phase in ("single", "double"):
            row = summary.get((tap, phase))
            if row is None:
                continue
            lines.append(f"{tap:<11}{phase:<8}{row['E_dB']:8.2f}{row['N_dB']:8.2f}"
                         f"{row['I_dB']:8.2f}{row['SDR_dB']:9.2f}")
    return "\n".join(lines)


def cmd_run(cfg: RunConfig, stream=None) -> RunResult:
    stream = sys.stdout if stream is None else stream
    cfg.validate()
    cfg.out_dir = Path(cfg.out_dir if cfg.out_dir is not None else default_out_root())
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    items = [str(p) for p in cfg.scenarios] + [int(s) for s in cfg.seeds]
    tasks = [(cfg, it) for it in items]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    reports = [r.report for r in results]
    metrics.write_metrics_csv(cfg.out_dir / "metrics.csv", reports)
    summary = metrics.summarize(reports)
    if cfg.plots:
        from .plotting import mean_curves, plot_erle, plot_summary

        fs = 16000
        plot_erle(cfg.out_dir / "erle_mean.png", mean_curves([r.erle_curves for r in reports]), fs,
                  title=f"mean ERLE over {len(reports)} scenarios")
        plot_summary(cfg.out_dir / "summary.png", summary)

    for r in results:
        bt = 1000.0 * r.block_times
        print(f"{r.scenario_id}: {len(bt)} blocks, mean {bt.mean():.2f} ms, max {bt.max():.2f} ms per block",
              file=stream)
    res = RunResult(results, summary)
    allt = 1000.0 * res.block_times
    if allt.size:
        block_ms = 1000.0 * cfg.frame_shift / 16000
        print(f"mean block time {allt.mean():.2f} ms (real-time budget {block_ms:.0f} ms)", file=stream)
    print(format_summary(summary, cfg.taps), file=stream)
    return res


# --------------------------------------------------------------------------- masks-export


def cmd_masks_export(scenario, provider: str, path, aec_init: str = "auto", frame_shift: int = 1024) -> int:
    """Run ``provider`` over one scenario and write its mask stream; returns the block count."""
    cfg = RunConfig(provider=provider, aec_init=aec_init, frame_shift=frame_shift, scenarios=[scenario])
    cfg.validate()
    scenario_id, scene = _load(scenario)
    out = run_scene(cfg, scenario_id, scene, record_masks=True)
    config = FrameConfig(frame_shift=frame_shift, channels=scene.d.shape[0], sample_rate=scene.sample_rate)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    control.write_mask_file(path, out.masks, config)
    return len(out.masks)


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jointaec", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate scenarios and write them to disk")
    g.add_argument("--seeds", required=True, help="seed list, e.g. 0-49 or 1,5,9")
    g.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV}/scenarios)")
    g.add_argument("--duration", type=float, default=10.0, help="seconds per scenario")
    g.add_argument("--channels", type=int, default=4)

    r = sub.add_parser("run", help="process scenarios and write WAVs, metrics and figures")
    r.add_argument("--scenarios", nargs="*", default=[], type=Path,
                   help="scenario directories, or a parent directory holding them")
    r.add_argument("--seeds", default=None, help="simulate these seeds in memory instead")
    r.add_argument("--provider", default="oracle",
                   help="oracle | oracle-direct | constant:mu,aec,bf,pf | file:<path or dir>")
    r.add_argument("--taps", default="aec,bf,pf")
    r.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV})")
    r.add_argument("--jobs", type=int, default=1, help="scenario worker processes")
    r.add_argument("--aec-init", choices=("auto", "zero", "oracle"), default="auto",
                   help="initial echo filter; auto uses the true RIRs for oracle providers")
    r.add_argument("--frame-shift", type=int, default=1024)
    r.add_argument("--no-plots", action="store_true")

    m = sub.add_parser("masks-export", help="write the mask stream of a provider to a file")
    m.add_argument("--scenario", required=True, type=Path)
    m.add_argument("--provider", default="oracle")
    m.add_argument("--out", required=True, type=Path)
    m.add_argument("--aec-init", choices=("auto", "zero", "oracle"), default="auto")
    m.add_argument("--frame-shift", type=int, default=1024)
    return ap


def _expand_scenarios(paths) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        if (p / "scenario.txt").exists():
            out.append(p)
        elif p.is_dir():
            found = sorted(c for c in p.iterdir() if (c / "scenario.txt").exists())
            if not found:
                raise FileNotFoundError(f"{p}: no scenario directories")
            out.extend(found)
        else:
            raise FileNotFoundError(f"{p}: not a scenario directory")
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            out = args.out if args.out is not None else default_out_root() / "scenarios"
            dirs = cmd_generate(parse_seeds(args.seeds), out, args.duration, args.channels)
            print(f"wrote {len(dirs)} scenarios to {out}")
        elif args.command == "run":
            cfg = RunConfig(
                scenarios=_expand_scenarios(args.scenarios),
                seeds=parse_seeds(args.seeds) if args.seeds else [],
                provider=args.provider, taps=parse_taps(args.taps), out_dir=args.out,
                jobs=args.jobs, aec_init=args.aec_init, frame_shift=args.frame_shift,
                plots=not args.no_plots,
            )
            cmd_run(cfg)
        else:
            count = cmd_masks_export(args.scenario, args.provider, args.out, args.aec_init, args.frame_shift)
            print(f"wrote {count} mask blocks to {args.out}")
    except control.MaskFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, sim.SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
