"""Device parameters, flux map, drive specifications and the config file format.

Config files are YAML (JSON is accepted too, being a YAML subset) with the
top-level keys ``sites``, ``cavity``, ``couplings``, ``hopping``,
``flux_map`` and ``drives``.  Frequencies are cyclic GHz, currents mA,
Rabi rates MHz and engineered rates 1/us.  See ``README.md`` for the full
schema.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigError, ValidationError

DISPERSIVE_WARN = 0.2
DISPERSIVE_MAX = 0.5

CONFIG_KEYS = ("sites", "cavity", "couplings", "hopping", "flux_map", "drives")


class DispersiveWarning(UserWarning):
    pass


class FluxWarning(UserWarning):
    pass


def _as_tuple(values, n, name):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1 and n != 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ValidationError(f"{name}: expected {n} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: values must be finite")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class DeviceParams:
    """Chain of anharmonic sites coupled to one lossy cavity mode.

    All frequencies are cyclic GHz.  ``site_freq_zero_flux`` are the bare site
    frequencies at zero flux (or at the bias point, when no flux map is used).
    ``hopping_nn`` holds the L-1 nearest-neighbour bonds and ``hopping_nnn`` the
    L-2 next-nearest-neighbour bonds (for L=3 the single 1-3 bond); scalars are
    broadcast.
    """

    site_freq_zero_flux: Sequence[float]
    anharmonicity: Sequence[float]
    cavity_freq_bare: float
    cavity_kappa: float
    coupling: Sequence[float]
    hopping_nn: Sequence[float] | float
    hopping_nnn: Sequence[float] | float = 0.0

    def __post_init__(self):
        L = len(np.atleast_1d(self.site_freq_zero_flux))
        if L < 2:
            raise ValidationError("n_sites: need at least 2 sites")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("site_freq_zero_flux", _as_tuple(self.site_freq_zero_flux, L, "site_freq_zero_flux"))
        set_("anharmonicity", _as_tuple(self.anharmonicity, L, "anharmonicity"))
        set_("coupling", _as_tuple(self.coupling, L, "coupling"))
        set_("hopping_nn", _as_tuple(self.hopping_nn, L - 1, "hopping_nn"))
        set_("hopping_nnn", _as_tuple(self.hopping_nnn, L - 2, "hopping_nnn") if L > 2 else ())
        set_("cavity_freq_bare", float(self.cavity_freq_bare))
        set_("cavity_kappa", float(self.cavity_kappa))
        if not (np.isfinite(self.cavity_freq_bare) and np.isfinite(self.cavity_kappa)):
            raise ValidationError("cavity: frequencies must be finite")
        if self.cavity_kappa <= 0:
            raise ValidationError("cavity.kappa_ghz: must be positive")
        if any(a >= 0 for a in self.anharmonicity):
            raise ValidationError("sites.anharmonicity_ghz: attractive model requires every anharmonicity < 0")
        self.check_dispersive(self.site_freq_zero_flux)

    @property
    def n_sites(self) -> int:
        return len(self.site_freq_zero_flux)

    def check_dispersive(self, site_freqs) -> np.ndarray:
        ratio = np.abs(np.asarray(self.coupling) / (np.asarray(site_freqs) - self.cavity_freq_bare))
        if np.any(ratio > DISPERSIVE_MAX):
            raise ValidationError(f"couplings.g_ghz: |g/(w-wc)| = {ratio.max():.3f} exceeds {DISPERSIVE_MAX}")
        if np.any(ratio > DISPERSIVE_WARN):
            warnings.warn(f"weakly dispersive: |g/(w-wc)| = {ratio.max():.3f}", DispersiveWarning, stacklevel=3)
        return ratio

    def hopping_matrix(self) -> np.ndarray:
        """Symmetric L x L hopping matrix (zero diagonal), GHz."""
        L = self.n_sites
        T = np.zeros((L, L))
        for j, J in enumerate(self.hopping_nn):
            T[j, j + 1] = T[j + 1, j] = J
        for j, J in enumerate(self.hopping_nnn):
            T[j, j + 2] = T[j + 2, j] = J
        return T

    def replace(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class FluxMap:
    """Site frequency versus coil current, w_j(I) = w_0j sqrt(|cos(B_j I + A_j)|).

    ``offset`` is the shared trapped-flux phase A; ``offsets`` optionally
    overrides it per site.
    """

    slope: Sequence[float]
    offset: float = 0.0
    tunable: Sequence[bool] | None = None
    offsets: Sequence[float] | None = None
    current_bounds: tuple = (-2.0, 17.0)

    def __post_init__(self):
        L = len(np.atleast_1d(self.slope))
        object.__setattr__(self, "slope", _as_tuple(self.slope, L, "flux_map.slope_rad_per_ma"))
        tun = self.tunable if self.tunable is not None else [s != 0 for s in self.slope]
        if len(tun) != L:
            raise ValidationError("flux_map.tunable: length mismatch")
        object.__setattr__(self, "tunable", tuple(bool(t) for t in tun))
        if self.offsets is not None:
            object.__setattr__(self, "offsets", _as_tuple(self.offsets, L, "flux_map.offsets_rad"))
        lo, hi = (float(x) for x in self.current_bounds)
        if not lo < hi:
            raise ValidationError("flux_map.current_bounds_ma: need lower < upper")
        object.__setattr__(self, "current_bounds", (lo, hi))
        object.__setattr__(self, "offset", float(self.offset))

    def phases(self, current: float) -> np.ndarray:
        off = np.asarray(self.offsets) if self.offsets is not None else self.offset
        return np.asarray(self.slope) * current + off


def nominal_flux_map(n_sites: int = 3) -> FluxMap:
    """Nominal three-site map: 17 mA is a quarter flux quantum on site 1, site 3 threads 2.5% more flux."""
    if n_sites != 3:
        raise ValidationError("nominal_flux_map is defined for three sites")
    b = np.pi / 68.0
    return FluxMap(slope=(b, 0.0, 1.025 * b), offset=0.0, tunable=(True, False, True))


def qubit_freq_at_flux(params: DeviceParams, flux_map: Optional[FluxMap], current: float) -> np.ndarray:
    """Per-site cyclic frequencies (GHz) at coil current ``current`` (mA)."""
    w0 = np.asarray(params.site_freq_zero_flux)
    if flux_map is None:
        return w0.copy()
    if len(flux_map.slope) != params.n_sites:
        raise ValidationError("flux_map: number of sites does not match the device")
    lo, hi = flux_map.current_bounds
    if not lo <= current <= hi:
        raise ValidationError(f"current {current} mA outside scan bounds [{lo}, {hi}]")
    c = np.cos(flux_map.phases(current))
    tun = np.asarray(flux_map.tunable)
    if np.any(tun & (np.abs(c) < 1e-3)):
        warnings.warn(f"flux near half quantum at {current} mA: frequency collapses", FluxWarning, stacklevel=2)
    if np.any(tun & (c < 0)):
        warnings.warn(f"cos(B I + A) < 0 at {current} mA; using |cos|", FluxWarning, stacklevel=2)
    return np.where(tun, w0 * np.sqrt(np.abs(c)), w0)


DRIVE_KINDS = ("cooling", "coherent")


@dataclass(frozen=True)
class DriveSpec:
    """A cooling or coherent drive acting on the ordered state pair ``pair``.

    Cooling drives carry a photon number ``nbar`` (with ``detuning`` in GHz,
    positive = red of the cavity; None means on resonance with the pair) or,
    alternatively, a directly specified engineered ``rate`` in 1/us.  Coherent
    drives carry the Rabi frequency ``rabi`` in MHz (Omega_R / 2 pi).
    """

    kind: str
    pair: tuple
    nbar: Optional[float] = None
    rabi: Optional[float] = None
    detuning: Optional[float] = None
    rate: Optional[float] = None

    def __post_init__(self):
        if self.kind not in DRIVE_KINDS:
            raise ValidationError(f"drives.kind: expected one of {DRIVE_KINDS}, got {self.kind!r}")
        if len(self.pair) != 2 or self.pair[0] == self.pair[1]:
            raise ValidationError("drives.pair: need two distinct state labels")
        object.__setattr__(self, "pair", tuple(self.pair))
        for name in ("nbar", "rabi", "rate"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValidationError(f"drives.{name}: must be >= 0")
        if self.kind == "coherent":
            if self.rabi is None or self.nbar is not None or self.rate is not None:
                raise ValidationError("drives: coherent drive needs rabi_mhz only")
        else:
            if self.rabi is not None:
                raise ValidationError("drives: cooling drive cannot carry rabi_mhz")
            if (self.nbar is None) == (self.rate is None):
                raise ValidationError("drives: cooling drive needs exactly one of nbar or rate_per_us")


# --------------------------------------------------------------------------- config I/O


def _get(d, key, path, default=dataclasses.MISSING):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if key not in d:
        if default is dataclasses.MISSING:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    return d[key]


def _num(v, path):
    try:
        if isinstance(v, (list, tuple)):
            return [float(x) for x in v]
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected number(s), got {v!r}") from None


def parse_config(doc: dict):
    """Parse an already-loaded config mapping into (DeviceParams, FluxMap | None, [DriveSpec])."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a mapping")
    unknown = set(doc) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown top-level key")
    sites = _get(doc, "sites", "")
    cav = _get(doc, "cavity", "")
    coup = _get(doc, "couplings", "")
    hop = _get(doc, "hopping", "")
    try:
        params = DeviceParams(
            site_freq_zero_flux=_num(_get(sites, "freq_zero_flux_ghz", "sites"), "sites.freq_zero_flux_ghz"),
            anharmonicity=_num(_get(sites, "anharmonicity_ghz", "sites"), "sites.anharmonicity_ghz"),
            cavity_freq_bare=_num(_get(cav, "freq_ghz", "cavity"), "cavity.freq_ghz"),
            cavity_kappa=_num(_get(cav, "kappa_ghz", "cavity"), "cavity.kappa_ghz"),
            coupling=_num(_get(coup, "g_ghz", "couplings"), "couplings.g_ghz"),
            hopping_nn=_num(_get(hop, "nn_ghz", "hopping"), "hopping.nn_ghz"),
            hopping_nnn=_num(_get(hop, "nnn_ghz", "hopping", 0.0), "hopping.nnn_ghz"),
        )
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ValidationError(f"invalid device: {exc}") from exc

    flux_map = None
    fm = doc.get("flux_map")
    if fm is not None:
        flux_map = FluxMap(
            slope=_num(_get(fm, "slope_rad_per_ma", "flux_map"), "flux_map.slope_rad_per_ma"),
            offset=_num(_get(fm, "offset_rad", "flux_map", 0.0), "flux_map.offset_rad"),
            tunable=_get(fm, "tunable", "flux_map", None),
            offsets=fm.get("offsets_rad"),
            current_bounds=tuple(_num(_get(fm, "current_bounds_ma", "flux_map", [-2.0, 17.0]), "flux_map.current_bounds_ma")),
        )
        if len(flux_map.slope) != params.n_sites:
            raise ConfigError("flux_map.slope_rad_per_ma: length does not match sites")

    drives = []
    for k, d in enumerate(doc.get("drives") or []):
        path = f"drives[{k}]"
        drives.append(
            DriveSpec(
                kind=_get(d, "kind", path),
                pair=tuple(_get(d, "pair", path)),
                nbar=d.get("nbar"),
                rabi=d.get("rabi_mhz"),
                detuning=d.get("detuning_ghz"),
                rate=d.get("rate_per_us"),
            )
        )
    return params, flux_map, drives


def load_config(path):
    """Read and validate a config file."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: not valid YAML/JSON ({exc})") from exc
    return parse_config(doc)


def config_to_dict(params: DeviceParams, flux_map: Optional[FluxMap] = None, drives=()) -> dict:
    doc = {
        "sites": {
            "freq_zero_flux_ghz": list(params.site_freq_zero_flux),
            "anharmonicity_ghz": list(params.anharmonicity),
        },
        "cavity": {"freq_ghz": params.cavity_freq_bare, "kappa_ghz": params.cavity_kappa},
        "couplings": {"g_ghz": list(params.coupling)},
        "hopping": {"nn_ghz": list(params.hopping_nn), "nnn_ghz": list(params.hopping_nnn)},
    }
    if flux_map is not None:
        fm = {
            "slope_rad_per_ma": list(flux_map.slope),
            "offset_rad": flux_map.offset,
            "tunable": list(flux_map.tunable),
            "current_bounds_ma": list(flux_map.current_bounds),
        }
        if flux_map.offsets is not None:
            fm["offsets_rad"] = list(flux_map.offsets)
        doc["flux_map"] = fm
    out = []
    for d in drives:
        item = {"kind": d.kind, "pair": list(d.pair)}
        for key, attr in (("nbar", "nbar"), ("rabi_mhz", "rabi"), ("detuning_ghz", "detuning"), ("rate_per_us", "rate")):
            if getattr(d, attr) is not None:
                item[key] = getattr(d, attr)
        out.append(item)
    doc["drives"] = out
    return doc


def save_config(path, params, flux_map=None, drives=()):
    doc = config_to_dict(params, flux_map, drives)
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(doc, indent=2))
    else:
        path.write_text(yaml.safe_dump(doc, sort_keys=False))


def nominal_device() -> DeviceParams:
    """Main-text device (zero-flux site frequencies)."""
    return DeviceParams(
        site_freq_zero_flux=(5.074, 4.892, 5.165),
        anharmonicity=(-0.214, -0.240, -0.214),
        cavity_freq_bare=7.116,
        cavity_kappa=0.010,
        coupling=(0.149, 0.264, 0.155),
        hopping_nn=0.177,
        hopping_nnn=0.026,
    )
