"""Scenario configuration: parsing and validation without running anything.

A scenario file is line-based ``key = value`` text under ``[section]``
headers. Sections:

``[scenario]``
    ``name``, ``seed`` (mandatory unless given on the command line),
    ``mode`` (pseudopotential | rf_full), ``timestep``,
    ``initial_temperature``, ``sample_stride``, ``remove_drift``.
``[trap]``
    ``preset`` and/or explicit trap keys (``r0``, ``kappa``,
    ``rf_frequency``, ``v_rf``, ``v_ec``, ``v_dc``, ``v_offset``).
``[species.<name>]``
    ``count``, ``heating`` (K/s) and the species keys of the preset file; a
    preset of the same name is used when neither ``preset`` nor ``mass_u``
    is given.
``[cooling]``
    ``enabled``, ``axes``.
``[gas]``
    ``<gas preset> = <pressure in Pa>``.
``[reactions]``
    ``channels`` (comma separated library names), ``gate``,
    ``photon_intensity``, ``photon_cross_section``, ``photon_wavelength``,
    ``photodestruction_reactant``.
``[schedule]``
    ``<action> = <time> [arguments]`` entries in non-decreasing time order;
    see :data:`ACTIONS`.
``[output]``, ``[image]``, ``[spectrum]``, ``[fit]``, ``[react]``, ``[rempd]``
    Settings of the individual subcommands.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import presets
from .inifile import ConfigError, Entry, Section, parse_float, parse_text
from .trapmodel import IonSpecies, TrapConfig, mathieu_q

#: q at and above which a stability warning is issued.
Q_WARNING = 0.9

MODES = ("pseudopotential", "rf_full")

SECTION_KEYS = {
    "scenario": {"name", "seed", "mode", "timestep", "initial_temperature", "sample_stride", "remove_drift"},
    "trap": {"preset", *presets.TRAP_KEYS},
    "species": {"preset", "mass_u", "charge", "role", "beta_over_m", "light_pressure", "light_pressure_v_eq",
                "count", "heating"},
    "cooling": {"enabled", "axes"},
    "reactions": {"channels", "gate", "photon_intensity", "photon_cross_section", "photon_wavelength",
                  "photodestruction_reactant"},
    "output": {"temperature", "final_snapshot"},
    "image": {"view_plane", "pixel_size", "shape", "exposure", "psf_sigma", "settle", "species"},
    "spectrum": {"method", "target", "duration", "offset_fraction", "observe", "lowest_frequency", "stride",
                 "frequencies", "amplitude", "dwell", "readout", "settle"},
    "fit": {"reference", "repeats", "settle"},
    "react": {"duration", "bin", "md", "fit_species", "fit_gas"},
    "rempd": {"levels", "t_bbr", "ir", "uv_intensity", "uv_wavelength", "duration", "samples",
              "initial_temperature"},
}
OPEN_SECTIONS = {"gas", "schedule", "fit.grid"}

#: Schedule actions and their accepted ``key=value`` arguments. ``lasers``
#: takes a bare ``on``/``off`` and ``heating`` takes ``<species>=<K/s>`` pairs.
ACTIONS = {
    "end": set(),
    "lasers": set(),
    "heating": None,
    "drive": {"amplitude", "frequency", "duration", "axis"},
    "kick": {"ion", "vx", "vy", "vz"},
    "eject_heavy": {"v_dc", "duration"},
    "eject_light": {"species", "amplitude", "duration", "frequency"},
    "ramp": {"v_start", "v_end", "duration", "v_offset"},
    "expose": {"duration", "bin"},
    "snapshot": set(),
    "image": set(),
}


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    message: str
    line: int | None = None

    def __str__(self):
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{self.level}: {where}{self.message}"


@dataclass(frozen=True)
class Action:
    time: float
    kind: str
    args: dict
    flag: str | None
    line: int


@dataclass
class SpeciesEntry:
    species: IonSpecies
    count: int
    heating: float


@dataclass
class Scenario:
    name: str
    seed: int | None
    sections: dict[str, Section]
    trap: TrapConfig | None = None
    species: list[SpeciesEntry] = field(default_factory=list)
    schedule: list[Action] = field(default_factory=list)
    base_dir: Path = Path(".")

    def section(self, name: str) -> Section:
        return self.sections.get(name) or Section(name, 0)

    @property
    def mode(self) -> str:
        return self.section("scenario").get("mode", "pseudopotential")

    def species_table(self) -> dict[str, IonSpecies]:
        return {e.species.name: e.species for e in self.species}


class _Collector:
    def __init__(self):
        self.items: list[Diagnostic] = []

    def error(self, message, line=None):
        self.items.append(Diagnostic("error", message, line))

    def warning(self, message, line=None):
        self.items.append(Diagnostic("warning", message, line))

    def guard(self, fn, *args, line=None):
        try:
            return fn(*args)
        except ConfigError as exc:
            self.error(exc.message, exc.line if exc.line is not None else line)
        except (ValueError, KeyError) as exc:
            self.error(str(exc).strip("'\""), line)
        return None


def _check_keys(sec: Section, kind: str, diag: _Collector) -> None:
    allowed = SECTION_KEYS[kind]
    for e in sec.entries:
        if e.key not in allowed:
            diag.error(f"[{sec.name}] unknown key {e.key!r}", e.line)


def _species_section(sec: Section, name: str) -> IonSpecies:
    if sec.get("preset") is None and sec.get("mass_u") is None:
        if name not in presets.names("species"):
            raise ConfigError(f"[{sec.name}] unknown species; give preset or mass_u", sec.line)
        sec = Section(sec.name, sec.line, [Entry("preset", name, sec.line), *sec.entries])
    return presets.species_from_section(sec, name)


def _parse_args(tokens: list[str], line: int) -> tuple[dict, str | None]:
    args, flag = {}, None
    for tok in tokens:
        if "=" in tok:
            k, v = tok.split("=", 1)
            if not k:
                raise ConfigError(f"malformed argument {tok!r}", line)
            args[k] = v
        elif flag is None:
            flag = tok
        else:
            raise ConfigError(f"unexpected argument {tok!r}", line)
    return args, flag


def _parse_action(entry, species_names: set[str]) -> Action:
    kind = entry.key
    if kind not in ACTIONS:
        raise ConfigError(f"unknown schedule action {kind!r}", entry.line)
    tokens = entry.value.split()
    if not tokens:
        raise ConfigError(f"{kind}: missing start time", entry.line)
    t = parse_float(tokens[0], entry.line, f"{kind} time")
    if not t >= 0:
        raise ConfigError(f"{kind}: start time must be >= 0", entry.line)
    args, flag = _parse_args(tokens[1:], entry.line)
    allowed = ACTIONS[kind]
    if kind == "heating":
        for k, v in args.items():
            if k not in species_names:
                raise ConfigError(f"heating: undefined species {k!r}", entry.line)
            if parse_float(v, entry.line, k) < 0:
                raise ConfigError("heating: rates must be >= 0", entry.line)
        if flag is not None:
            raise ConfigError(f"heating: unexpected argument {flag!r}", entry.line)
        values = {k: float(v) for k, v in args.items()}
    else:
        for k in args:
            if k not in allowed:
                raise ConfigError(f"{kind}: unknown argument {k!r}", entry.line)
        values = {}
        for k, v in args.items():
            if k == "species":
                if v not in species_names:
                    raise ConfigError(f"{kind}: undefined species {v!r}", entry.line)
                values[k] = v
            elif k == "axis":
                if v not in ("x", "y", "z"):
                    raise ConfigError(f"{kind}: axis must be x, y or z", entry.line)
                values[k] = v
            elif k == "ion":
                values[k] = int(v)
            else:
                values[k] = parse_float(v, entry.line, k)
        if kind == "lasers":
            if flag not in ("on", "off"):
                raise ConfigError("lasers: expected on or off", entry.line)
        elif flag is not None:
            raise ConfigError(f"{kind}: unexpected argument {flag!r}", entry.line)
        required = {
            "drive": ("amplitude", "frequency", "duration"),
            "kick": ("ion",),
            "eject_heavy": ("v_dc", "duration"),
            "eject_light": ("species", "amplitude", "duration"),
            "ramp": ("v_start", "v_end", "duration", "v_offset"),
            "expose": ("duration", "bin"),
        }.get(kind, ())
        missing = [k for k in required if k not in values]
        if missing:
            raise ConfigError(f"{kind}: missing {', '.join(missing)}", entry.line)
    return Action(t, kind, values, flag, entry.line)


def load(path: str | Path, seed: int | None = None) -> tuple[Scenario | None, list[Diagnostic]]:
    """Parse and check a scenario file; ``seed`` overrides the configured one."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        return None, [Diagnostic("error", f"cannot read {path}: {exc.strerror}")]
    return parse(text, seed, path.parent)


def parse(text: str, seed: int | None = None, base_dir: Path = Path(".")) -> tuple[Scenario | None, list[Diagnostic]]:
    diag = _Collector()
    try:
        raw = parse_text(text)
    except ConfigError as exc:
        return None, [Diagnostic("error", exc.message, exc.line)]
    sections: dict[str, Section] = {}
    species_secs: list[Section] = []
    for sec in raw:
        kind = sec.name if sec.name in OPEN_SECTIONS else sec.name.split(".", 1)[0]
        if sec.name.startswith("species."):
            species_secs.append(sec)
            _check_keys(sec, "species", diag)
            continue
        if kind not in SECTION_KEYS and kind not in OPEN_SECTIONS:
            diag.error(f"unknown section [{sec.name}]", sec.line)
            continue
        if sec.name in sections:
            diag.error(f"duplicate section [{sec.name}]", sec.line)
            continue
        sections[sec.name] = sec
        if kind in SECTION_KEYS and sec.name == kind:
            _check_keys(sec, kind, diag)

    head = sections.get("scenario") or Section("scenario", 0)
    name = head.get("name", "scenario")
    if seed is None:
        seed = diag.guard(head.int, "seed")
        if seed is None and not any(d.message.startswith("seed") for d in diag.items):
            diag.error("missing seed: set seed in [scenario] or pass --seed", head.line or None)
    if seed is not None and seed < 0:
        diag.error("seed must be a non-negative integer", head.line or None)
    mode = head.get("mode", "pseudopotential")
    if mode not in MODES:
        diag.error(f"mode must be one of {', '.join(MODES)}", head.entry("mode").line)
    for key in ("timestep", "initial_temperature"):
        v = diag.guard(head.float, key)
        if v is not None and v < 0:
            diag.error(f"{key} must be >= 0", head.entry(key).line)
    stride = diag.guard(head.int, "sample_stride")
    if stride is not None and stride < 1:
        diag.error("sample_stride must be >= 1", head.entry("sample_stride").line)

    sc = Scenario(name, seed, sections, base_dir=base_dir)

    needs_trap = bool(species_secs) or "schedule" in sections or "rempd" not in sections
    trap_sec = sections.get("trap")
    if trap_sec is None:
        if needs_trap:
            diag.error("missing [trap] section")
    else:
        base = None
        preset = trap_sec.get("preset")
        if preset is not None:
            base = diag.guard(presets.trap, preset, line=trap_sec.entry("preset").line)
        if preset is None or base is not None:
            sc.trap = diag.guard(presets.trap_from_section, trap_sec, base, line=trap_sec.line)

    for sec in species_secs:
        sp_name = sec.name.split(".", 1)[1]
        sp = diag.guard(_species_section, sec, sp_name, line=sec.line)
        count = diag.guard(sec.int, "count", 0)
        heat = diag.guard(sec.float, "heating", 0.0)
        if sp is None or count is None or heat is None:
            continue
        if count < 0:
            diag.error(f"[{sec.name}] count must be >= 0", sec.entry("count").line)
        if heat < 0:
            diag.error(f"[{sec.name}] heating must be >= 0", sec.entry("heating").line)
        sc.species.append(SpeciesEntry(sp, count, heat))
        if sc.trap is not None:
            q = abs(mathieu_q(sc.trap, sp))
            if q >= Q_WARNING:
                diag.warning(f"species {sp_name}: Mathieu q = {q:.3f} >= {Q_WARNING} (near or beyond stability)",
                             sec.line)

    names = {e.species.name for e in sc.species}
    sched = sections.get("schedule")
    if sched is not None:
        last = 0.0
        for e in sched.entries:
            act = diag.guard(_parse_action, e, names, line=e.line)
            if act is None:
                continue
            if act.time < last:
                diag.error(f"schedule time {act.time!r} is earlier than the previous action ({last!r})", e.line)
            last = max(last, act.time)
            sc.schedule.append(act)
        if sc.schedule and sum(e.count for e in sc.species) == 0:
            diag.error("schedule needs at least one ion")

    gas = sections.get("gas")
    if gas is not None:
        known = presets.names("gas")
        for e in gas.entries:
            if e.key not in known:
                diag.error(f"[gas] unknown gas {e.key!r}", e.line)
            elif diag.guard(parse_float, e.value, e.line, e.key) is not None and float(e.value) < 0:
                diag.error(f"[gas] pressure of {e.key} must be >= 0", e.line)
    rx = sections.get("reactions")
    if rx is not None and rx.get("channels"):
        from .reactions import channel_library

        lib = channel_library()
        for ch in _split_list(rx.get("channels")):
            if ch not in lib:
                diag.error(f"unknown reaction channel {ch!r}", rx.entry("channels").line)
    img = sections.get("image")
    if img is not None:
        diag.guard(image_config, sc)
    return sc, diag.items


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.replace(",", " ").split() if t.strip()]


def float_list(sec: Section, key: str) -> list[float]:
    e = sec.entry(key)
    if e is None:
        return []
    return [parse_float(t, e.line, key) for t in _split_list(e.value)]


def image_config(sc: Scenario):
    from .analysis.imaging import ImageConfig

    sec = sc.section("image")
    shape = sec.get("shape", "128 256")
    try:
        rows, cols = (int(v) for v in _split_list(shape))
    except ValueError:
        e = sec.entry("shape")
        raise ConfigError("shape: expected two integers 'rows cols'", e.line if e else None) from None
    return ImageConfig(
        sec.get("view_plane", "zy"),
        sec.float("pixel_size", 2e-6),
        (rows, cols),
        sec.float("exposure", 1e-3),
        sec.float("psf_sigma", 0.0),
    )


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.level == "error" for d in diags)


def format_diagnostics(diags: list[Diagnostic], source: str = "") -> str:
    prefix = f"{source}: " if source else ""
    return "".join(f"{prefix}{d}\n" for d in diags)


__all__ = [
    "ACTIONS",
    "Action",
    "Diagnostic",
    "Q_WARNING",
    "Scenario",
    "SpeciesEntry",
    "float_list",
    "format_diagnostics",
    "has_errors",
    "image_config",
    "load",
    "parse",
]
