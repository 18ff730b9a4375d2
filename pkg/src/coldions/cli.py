"""Command-line scenario runner.

Every executing subcommand writes its files into ``--out-dir`` together with
``manifest.txt`` (``sha256  relative/path`` per file, sorted by path).
Exit status: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .inifile import ConfigError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MANIFEST = "manifest.txt"


class RuntimeFailure(RuntimeError):
    """Failure while executing a scenario, tagged with the scenario time."""

    def __init__(self, message: str, time: float | None = None):
        where = f"t = {time!r} s: " if time is not None else ""
        super().__init__(where + message)


class Outputs:
    """Tracks files written into the output directory and writes the manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.files: list[str] = []

    def path(self, rel: str) -> Path:
        if rel in self.files:
            raise ValueError(f"output {rel} written twice")
        self.files.append(rel)
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, rel: str, text: str) -> None:
        with open(self.path(rel), "w", newline="\n") as fh:
            fh.write(text)

    def manifest(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        lines = []
        for rel in sorted(self.files):
            digest = hashlib.sha256((self.root / rel).read_bytes()).hexdigest()
            lines.append(f"{digest}  {rel}\n")
        out = self.root / MANIFEST
        with open(out, "w", newline="\n") as fh:
            fh.writelines(lines)
        return out


def _kv_block(items) -> str:
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return str(bool(v))
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    return "".join(f"{k} = {fmt(v)}\n" for k, v in items)


# ---------------------------------------------------------------- commands

def cmd_trap(sc, out: Outputs) -> None:
    import math

    from .csvio import write_csv
    from .trapmodel import RadialDeconfinement, is_stable, mathieu_q, secular_frequencies

    rows = []
    for e in sc.species:
        sp = e.species
        q = mathieu_q(sc.trap, sp)
        try:
            w = secular_frequencies(sc.trap, sp)
            fr, fz = w.omega_r / (2 * math.pi), w.omega_z / (2 * math.pi)
        except (RadialDeconfinement, ValueError):
            fr = fz = math.nan
        rows.append((sp.name, sp.mass_u, sp.charge_number, q, is_stable(sc.trap, sp), fr, fz))
    write_csv(out.path("trap.csv"), ("species", "mass_u", "charge", "q", "stable", "f_r_hz", "f_z_hz"), rows)
    t = sc.trap
    out.write_text("trap.txt", _kv_block([
        ("r0", t.r0), ("kappa", t.kappa), ("rf_frequency", t.omega_rf / (2 * math.pi)),
        ("v_rf", t.v_rf), ("v_ec", t.v_ec), ("v_dc", t.v_dc), ("v_offset", t.v_offset),
    ]))


def cmd_rempd(sc, out: Outputs) -> None:
    from . import rempd
    from .csvio import write_csv

    sec = sc.section("rempd")
    levels = sec.get("levels", "toy")
    scheme = rempd.toy_hdplus() if levels == "toy" else rempd.LevelScheme.load(sc.base_dir / levels)
    ir = None
    e = sec.entry("ir")
    if e is not None:
        f = e.value.split()
        if len(f) != 5:
            raise ConfigError("ir: expected 'v J v' J' rate'", e.line)
        ir = rempd.IrPump((int(f[0]), int(f[1])), (int(f[2]), int(f[3])), float(f[4]))
    env = rempd.RadiationEnv(sec.float("t_bbr", 300.0), ir, sec.float("uv_intensity", 0.0),
                             sec.float("uv_wavelength", 266e-9))
    t_rot = sec.float("initial_temperature", env.t_bbr)
    duration = sec.float("duration", 10.0)
    samples = sec.int("samples", 101)
    p0 = np.append(scheme.boltzmann(t_rot), 0.0)
    times, pops = rempd.integrate(p0, rempd.build_rate_matrix(scheme, env), duration, samples)
    rempd.write_populations(out.path("populations.csv"), scheme, times, pops)
    write_csv(out.path("survival.csv"), ("t_s", "survival"), zip(times, 1.0 - pops[:, -1]))
    v0 = [i for i, lv in enumerate(scheme.levels) if lv[0] == 0]
    fit = rempd.boltzmann_fit([scheme.energies[scheme.levels[i]] for i in v0], pops[-1, v0],
                              [scheme.levels[i][1] for i in v0])
    out.write_text("rempd.txt", _kv_block([
        ("final_survival", float(1.0 - pops[-1, -1])),
        ("final_v0_rotational_temperature", fit.temperature),
        ("final_v0_fit_residual", fit.residual),
        ("final_v0_thermal", fit.thermal),
    ]))


class _Sim:
    """Ensemble, force configuration, cooling and heating built from a scenario."""

    def __init__(self, sc):
        from .dynamics import ForceConfig, HeatingModel, LaserCooling, init_ensemble

        self.sc = sc
        head = sc.section("scenario")
        present = [(e.species, e.count) for e in sc.species if e.count > 0]
        if not present:
            raise RuntimeFailure("scenario has no ions")
        self.state = init_ensemble(present, sc.trap, seed=sc.seed,
                                   initial_temperature=head.float("initial_temperature", 0.0))
        dt = head.float("timestep")
        if dt is None:
            sp = [s for s, _ in present]
            dt = ForceConfig.rf_timestep(sc.trap) if sc.mode == "rf_full" else ForceConfig.pseudo_timestep(sc.trap, sp)
        self.config = ForceConfig(sc.mode, sc.trap, dt)
        self.config.check([s for s, _ in present])
        cool = sc.section("cooling")
        self.lasers = cool.bool("enabled", True)
        self.axes = cool.get("axes", "z")
        self.rates = {e.species.name: e.heating for e in sc.species if e.heating > 0}
        self._lc = LaserCooling
        self._hm = HeatingModel
        stride = head.int("sample_stride")
        if stride is None:
            stride = max(1, int(round(1e-5 / dt)))
        if sc.mode == "rf_full":
            k = self.config.steps_per_rf_period
            stride = max(k, stride // k * k)
        self.stride = stride

    @property
    def cooling(self):
        return self._lc(enabled=self.lasers, axes=self.axes)

    @property
    def heating(self):
        return self._hm(rates=dict(self.rates))

    def evolve(self, duration, observers=(), config=None):
        from .dynamics import IntegrationError, evolve

        if duration <= 0:
            return
        n = int(round(duration / self.config.timestep))
        if n < 1:
            return
        try:
            evolve(self.state, config or self.config, self.cooling, self.heating, duration=duration,
                   observers=observers, stride=self.stride if observers else None)
        except IntegrationError as exc:
            raise RuntimeFailure(str(exc)) from exc


def _channels(sc):
    from .reactions import PhotonTrigger, channel_library
    from .scenario import _split_list

    rx = sc.section("reactions")
    pressures = {e.key: float(e.value) for e in sc.section("gas").entries}
    photon = PhotonTrigger(rx.float("photon_intensity", 0.0), rx.float("photon_cross_section", 1e-21),
                           rx.float("photon_wavelength", 532e-9))
    lib = channel_library(pressures, rx.float("gate", 1.0), rx.get("photodestruction_reactant", "AF+"), photon)
    return [lib[name] for name in _split_list(rx.get("channels", ""))]


def cmd_run(sc, out: Outputs) -> None:
    from .dynamics import ExcitationDrive, TemperatureLog, TrajectoryRecorder, eject_heavy, eject_light, kick_ion
    from .dynamics.io import write_snapshot, write_temperature_log
    from .dynamics.protocols import ramp_extraction
    from .csvio import write_csv
    from .reactions import ExposureResult, expose
    from .scenario import image_config

    if not sc.schedule:
        return
    sim = _Sim(sc)
    st = sim.state
    head = sc.section("scenario")
    log = TemperatureLog(sim.stride, remove_drift=head.bool("remove_drift", False))
    outsec = sc.section("output")
    want_log = outsec.bool("temperature", True)
    counters: dict[str, int] = {}
    exposure = ExposureResult()
    escapes = []

    def numbered(prefix, ext):
        k = counters.get(prefix, 0)
        counters[prefix] = k + 1
        return f"{prefix}_{k:03d}.{ext}"

    for act in sc.schedule:
        try:
            sim.evolve(act.time - st.time, [log])
            a = act.args
            if act.kind == "lasers":
                sim.lasers = act.flag == "on"
            elif act.kind == "heating":
                sim.rates.update(a)
            elif act.kind == "drive":
                axis = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[a.get("axis", "x")]
                drive = ExcitationDrive(a["amplitude"], a["frequency"], axis, start_time=st.time)
                sim.evolve(a["duration"], [log], replace(sim.config, drive=drive))
            elif act.kind == "kick":
                kick_ion(st, a["ion"], (a.get("vx", 0.0), a.get("vy", 0.0), a.get("vz", 0.0)))
            elif act.kind == "eject_heavy":
                eject_heavy(st, sim.config, a["v_dc"], a["duration"], sim.cooling, sim.heating)
            elif act.kind == "eject_light":
                eject_light(st, sim.config, a["species"], a["amplitude"], a["duration"],
                            cooling=sim.cooling, heating=sim.heating, frequency=a.get("frequency"))
            elif act.kind == "ramp":
                escapes += ramp_extraction(st, sim.config, (a["v_start"], a["v_end"], a["duration"]),
                                           a["v_offset"], sim.cooling, sim.heating)
            elif act.kind == "expose":
                res = expose(st, _channels(sc), a["duration"], a["bin"], sim.config, sim.cooling, sim.heating)
                exposure.events += res.events
                exposure.composition += res.composition
            elif act.kind == "snapshot":
                write_snapshot(out.path(numbered("snapshot", "csv")), st)
            elif act.kind == "image":
                from .analysis.imaging import render_ccd

                cfg = image_config(sc)
                rec = TrajectoryRecorder(sim.stride)
                sim.evolve(cfg.exposure, [rec, log])
                render_ccd(rec.snapshots, cfg).write_pgm(out.path(numbered("image", "pgm")))
        except RuntimeFailure:
            raise
        except (ValueError, IndexError, KeyError) as exc:
            raise RuntimeFailure(f"{act.kind} (line {act.line}): {exc}", st.time) from exc
    if want_log and log.rows:
        write_temperature_log(out.path("temperature.csv"), log)
    if exposure.composition:
        exposure.write_log(out.path("reactions.csv"))
        exposure.write_composition(out.path("composition.csv"))
    if escapes:
        write_csv(out.path("escapes.csv"), ("t_s", "ion_id", "species", "v_rf"),
                  ((e.time, e.ion, e.species, e.v_rf) for e in escapes))
    if outsec.bool("final_snapshot", False):
        write_snapshot(out.path("final_snapshot.csv"), st)
    counts = st.counts()
    out.write_text("summary.txt", _kv_block([("t_end", float(st.time))]
                                            + [(f"N_{k}", int(v)) for k, v in sorted(counts.items())]
                                            + [("N_alive", int(np.sum(st.alive)))]))


def cmd_render(sc, out: Outputs) -> None:
    from .analysis.imaging import render_ccd
    from .dynamics import TrajectoryRecorder
    from .scenario import image_config

    sim = _Sim(sc)
    cfg = image_config(sc)
    sim.evolve(sc.section("image").float("settle", 3e-4))
    rec = TrajectoryRecorder(sim.stride)
    sim.evolve(cfg.exposure, [rec])
    species = sc.section("image").get("species")
    names = species.replace(",", " ").split() if species else None
    render_ccd(rec.snapshots, cfg, names).write_pgm(out.path("image.pgm"))


def cmd_fit(sc, out: Outputs) -> None:
    from .analysis.fitting import EnsembleSimulator, fit_ensemble
    from .analysis.imaging import CcdImage, read_pgm
    from .csvio import write_csv
    from .scenario import float_list, image_config

    sec = sc.section("fit")
    ref_name = sec.get("reference")
    if ref_name is None:
        raise ConfigError("[fit] needs reference")
    cfg = image_config(sc)
    data, _ = read_pgm(sc.base_dir / ref_name)
    reference = CcdImage(data, cfg)
    grid = {}
    gsec = sc.section("fit.grid")
    for e in gsec.entries:
        vals = float_list(gsec, e.key)
        grid[e.key] = [int(v) for v in vals] if e.key == "N" or e.key.startswith("N_") else vals
    if not grid:
        raise ConfigError("[fit.grid] needs at least one parameter")
    species = tuple(e.species for e in sc.species)
    sim = EnsembleSimulator(sc.trap, species, cfg, seed=sc.seed, settle=sec.float("settle", 3e-4),
                            repeats=sec.int("repeats", 1))
    fixed = {f"N_{e.species.name}": e.count for e in sc.species if f"N_{e.species.name}" not in grid}
    if "N" in grid:
        fixed.pop(f"N_{species[0].name}", None)
    res = fit_ensemble(reference, sim, grid, fixed)
    keys = list(grid)
    write_csv(out.path("candidates.csv"), (*keys, "score"),
              ((*(c.params[k] for k in keys), c.score) for c in res.candidates))
    out.write_text("fit.txt", res.report())


def cmd_react(sc, out: Outputs) -> None:
    from .reactions import expose, fit_decay

    sec = sc.section("react")
    sim = _Sim(sc)
    chans = _channels(sc)
    if not chans:
        raise ConfigError("[reactions] channels is empty")
    duration = sec.float("duration", 1.0)
    bin_width = sec.float("bin", duration / 100)
    md = sec.bool("md", False)
    res = expose(sim.state, chans, duration, bin_width, sim.config if md else None, sim.cooling, sim.heating)
    res.write_log(out.path("reactions.csv"))
    res.write_composition(out.path("composition.csv"))
    items = [(f"N_{k}", int(v)) for k, v in sorted(sim.state.counts().items())]
    target = sec.get("fit_species")
    if target is not None:
        from . import presets

        gas_name = sec.get("fit_gas")
        pressure = float(sc.section("gas").get(gas_name, "0"))
        density = presets.gas(gas_name, pressure=pressure).number_density
        t, n = res.counts(target)
        keep = n > 0
        fit = fit_decay(t[keep], n[keep], density)
        items += [("decay_rate", fit.gamma), ("k_fit", fit.k), ("decay_residual", fit.residual)]
    out.write_text("react.txt", _kv_block(items))


def cmd_spectrum(sc, out: Outputs) -> None:
    from .analysis.spectra import spectrum_fft, spectrum_sweep
    from .csvio import write_csv

    sec = sc.section("spectrum")
    sim = _Sim(sc)
    sim.evolve(sec.float("settle", 0.0))
    method = sec.get("method", "fft")
    if method == "fft":
        target = sec.get("target") or sc.species[0].species.name
        spec = spectrum_fft(sim.state, sim.config, target, sec.float("duration", 2e-3),
                            sec.float("offset_fraction", 0.05), sim.cooling, sim.heating,
                            stride=sec.int("stride", 1), lowest_frequency=sec.float("lowest_frequency"),
                            observe=sec.get("observe"))
    elif method == "sweep":
        e = sec.entry("frequencies")
        if e is None:
            raise ConfigError("[spectrum] sweep needs frequencies = start stop count")
        try:
            start, stop, count = e.value.split()
            freqs = np.linspace(float(start), float(stop), int(count))
        except ValueError:
            raise ConfigError("frequencies: expected 'start stop count'", e.line) from None
        spec = spectrum_sweep(sim.state, sim.config, freqs, sec.float("amplitude", 1.0), sec.float("dwell", 1e-3),
                              sec.get("readout") or sc.species[0].species.name, sim.cooling, sim.heating,
                              stride=sec.int("stride", 10))
    else:
        raise ConfigError(f"[spectrum] unknown method {method!r}", sec.entry("method").line)
    spec.write(out.path("spectrum.csv"))
    write_csv(out.path("peaks.csv"), ("frequency_hz", "height", "width_hz"),
              ((p.frequency, p.height, p.width) for p in spec.peaks))
    if spec.flags:
        out.write_text("flags.txt", "".join(f + "\n" for f in spec.flags))


COMMANDS = {
    "trap": cmd_trap,
    "run": cmd_run,
    "spectrum": cmd_spectrum,
    "render": cmd_render,
    "fit": cmd_fit,
    "react": cmd_react,
    "rempd": cmd_rempd,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coldions", description="Cold ion ensemble simulator and analysis toolkit.")
    p.add_argument("command", choices=["trap", "run", "validate", "spectrum", "render", "fit", "react", "rempd"])
    p.add_argument("--config", required=True, help="scenario file")
    p.add_argument("--seed", type=int, help="random seed (overrides the configured seed)")
    p.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p.add_argument("--threads", type=int, help="worker threads for the force kernel")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        # must be set before numba is first imported
        os.environ["NUMBA_NUM_THREADS"] = str(args.threads)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be a non-negative integer", file=sys.stderr)
        return EXIT_CONFIG

    from .scenario import format_diagnostics, has_errors, load

    sc, diags = load(args.config, args.seed)
    if args.command == "validate":
        sys.stdout.write(format_diagnostics(diags, args.config))
        return EXIT_CONFIG if has_errors(diags) else EXIT_OK
    sys.stderr.write(format_diagnostics(diags, args.config))
    if has_errors(diags):
        return EXIT_CONFIG
    out = Outputs(Path(args.out_dir))
    try:
        COMMANDS[args.command](sc, out)
    except ConfigError as exc:
        print(f"{args.config}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, ValueError, OSError) as exc:
        print(f"{args.config}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out.manifest()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
