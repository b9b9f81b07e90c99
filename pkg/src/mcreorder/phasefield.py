"""Two-dimensional Cahn-Hilliard demonstration model and its microstructure QoIs.

    dc/dt = div( M grad( f'(c) - kappa lap c ) ),  periodic on [0, L)^2

with the double-well bulk energy f(c) = W (c - c_alpha)^2 (c - c_beta)^2,
integrated by a semi-implicit Fourier-spectral scheme: the stiff fourth-order
term is implicit, the bulk chemical potential explicit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .samples import RandomStream

QOI_NAMES = ("area_alpha", "area_beta", "comp_alpha", "comp_beta", "char_length")
BLOWUP_LIMIT = 10.0


class PhaseFieldError(ValueError):
    """Invalid phase-field parameters."""


class BlowupError(RuntimeError):
    """The composition field left the physical range during integration."""


@dataclass(frozen=True)
class PhaseFieldParams:
    c_star: float = 0.5
    barrier: float = 1.0
    kappa: float = 0.5
    mobility: float = 1.0
    noise_amp: float = 0.01
    c_alpha: float = 0.3
    c_beta: float = 0.7
    grid_n: int = 64
    domain_l: float = 200.0
    dt: float = 10.0
    steps: int = 5000
    snapshot_every: int = 0
    # "squared": W (c-a)^2 (c-b)^2; "printed": W (c-a)(c-b), kept for comparison
    bulk_form: str = "squared"
    # "clipped_normal": N(0,1) clipped to [-1, 1]; "uniform": U(-1, 1)
    noise_form: str = "clipped_normal"

    def __post_init__(self):
        if not self.mobility > 0:
            raise PhaseFieldError(f"mobility must be > 0, got {self.mobility}")
        if not self.kappa >= 0:
            raise PhaseFieldError(f"kappa must be >= 0, got {self.kappa}")
        if not 0 < self.c_star < 1:
            raise PhaseFieldError(f"c_star must lie in (0, 1), got {self.c_star}")
        if not self.dt > 0:
            raise PhaseFieldError(f"dt must be > 0, got {self.dt}")
        if self.noise_amp < 0:
            raise PhaseFieldError(f"noise_amp must be >= 0, got {self.noise_amp}")
        n = self.grid_n
        if n < 2 or n & (n - 1):
            raise PhaseFieldError(f"grid_n must be a power of two, got {n}")
        if not self.domain_l > 0:
            raise PhaseFieldError(f"domain_l must be > 0, got {self.domain_l}")
        if self.steps < 0:
            raise PhaseFieldError(f"steps must be >= 0, got {self.steps}")
        if self.bulk_form not in ("squared", "printed"):
            raise PhaseFieldError(f"unknown bulk_form {self.bulk_form!r}")
        if self.noise_form not in ("clipped_normal", "uniform"):
            raise PhaseFieldError(f"unknown noise_form {self.noise_form!r}")

    @property
    def dx(self) -> float:
        return self.domain_l / self.grid_n

    def with_sample(self, x) -> "PhaseFieldParams":
        """Copy with [c_star, barrier, kappa, mobility] taken from a sample row."""
        if len(x) != 4:
            raise PhaseFieldError(f"phase-field samples need 4 columns [c*, W, kappa, M], got {len(x)}")
        return replace(self, c_star=float(x[0]), barrier=float(x[1]), kappa=float(x[2]), mobility=float(x[3]))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseFieldParams":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise PhaseFieldError(f"unknown phase-field parameters {sorted(unknown)}")
        return cls(**d)


@dataclass
class CompositionField:
    c: np.ndarray
    time: float = 0.0


def bulk_energy_density(c, p: PhaseFieldParams):
    """Return (f, df/dc)."""
    da = c - p.c_alpha
    db = c - p.c_beta
    if p.bulk_form == "printed":
        return p.barrier * da * db, p.barrier * (da + db)
    return p.barrier * da**2 * db**2, 2.0 * p.barrier * da * db * (da + db)


def bulk_curvature(c, p: PhaseFieldParams):
    """d2f/dc2."""
    da = c - p.c_alpha
    db = c - p.c_beta
    if p.bulk_form == "printed":
        return 2.0 * p.barrier + 0.0 * c
    return 2.0 * p.barrier * (da * da + 4.0 * da * db + db * db)


def wavenumbers(n: int, length: float, real: bool = True):
    """Squared continuous wavenumber 2*pi*m/L on the (r)fft grid."""
    kx = 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)
    ky = 2.0 * np.pi * (np.fft.rfftfreq(n, d=length / n) if real else np.fft.fftfreq(n, d=length / n))
    return kx[:, None] ** 2 + ky[None, :] ** 2


def init_field(p: PhaseFieldParams, rng: RandomStream) -> CompositionField:
    """c* + A zeta, with zeta made exactly mean-free inside [-1, 1]."""
    shape = (p.grid_n, p.grid_n)
    gen = rng.generator
    if p.noise_form == "uniform":
        zeta = gen.uniform(-1.0, 1.0, size=shape)
    else:
        zeta = np.clip(gen.standard_normal(shape), -1.0, 1.0)
    zeta -= zeta.mean()
    peak = np.abs(zeta).max()
    if peak > 1.0:
        zeta /= peak
    return CompositionField(p.c_star + p.noise_amp * zeta, 0.0)


class Stepper:
    """Precomputed spectral operators for repeated semi-implicit steps."""

    def __init__(self, p: PhaseFieldParams):
        self.p = p
        k2 = wavenumbers(p.grid_n, p.domain_l)
        self.k2 = k2
        self.denom = 1.0 + p.dt * p.mobility * p.kappa * k2 * k2

    def __call__(self, f: CompositionField) -> CompositionField:
        p = self.p
        c = f.c
        _, mu = bulk_energy_density(c, p)
        c_hat = np.fft.rfft2(c)
        mu_hat = np.fft.rfft2(mu)
        # increment form: the zero mode of the update is exactly zero
        delta_hat = -p.dt * p.mobility * self.k2 * (mu_hat + p.kappa * self.k2 * c_hat) / self.denom
        new = c + np.fft.irfft2(delta_hat, s=c.shape)
        peak = np.abs(new).max()
        if not np.isfinite(peak) or peak > BLOWUP_LIMIT:
            raise BlowupError(f"composition reached |c| = {peak:.3g} at t = {f.time + p.dt:g}")
        return CompositionField(new, f.time + p.dt)


def step(f: CompositionField, p: PhaseFieldParams) -> CompositionField:
    """One update  c_hat+ = (c_hat - dt M k^2 f'(c)_hat) / (1 + dt M kappa k^4)."""
    return Stepper(p)(f)


def total_free_energy(f: CompositionField | np.ndarray, p: PhaseFieldParams) -> float:
    """Cell-centred quadrature of f_bulk plus the spectral gradient energy."""
    c = f.c if isinstance(f, CompositionField) else np.asarray(f)
    area = p.dx * p.dx
    bulk, _ = bulk_energy_density(c, p)
    c_hat = np.fft.fft2(c)
    k2 = wavenumbers(p.grid_n, p.domain_l, real=False)
    # Parseval: sum_x |grad c|^2 = sum_k k^2 |c_hat|^2 / N^2
    grad2 = float(np.sum(k2 * np.abs(c_hat) ** 2)) / c.size
    return float(np.sum(bulk)) * area + 0.5 * p.kappa * grad2 * area


@dataclass
class Snapshot:
    time: float
    energy: float
    mean: float
    c: np.ndarray


@dataclass
class Trajectory:
    params: PhaseFieldParams
    snapshots: list[Snapshot] = field(default_factory=list)

    @property
    def final(self) -> CompositionField:
        s = self.snapshots[-1]
        return CompositionField(s.c, s.time)


def run(p: PhaseFieldParams, rng: RandomStream, snapshot_every: int | None = None) -> Trajectory:
    """Initial condition then ``p.steps`` updates.

    Snapshots are kept at step 0, every ``snapshot_every`` steps (0 or None
    means only the end) and at the final step.
    """
    every = p.snapshot_every if snapshot_every is None else snapshot_every
    f = init_field(p, rng)
    traj = Trajectory(p)

    def keep(field_: CompositionField):
        traj.snapshots.append(
            Snapshot(field_.time, total_free_energy(field_, p), float(field_.c.mean()), field_.c.copy())
        )

    keep(f)
    stepper = Stepper(p)
    for s in range(1, p.steps + 1):
        f = stepper(f)
        if (every and s % every == 0) or s == p.steps:
            keep(f)
    return traj


# ---------------------------------------------------------------------------
# Quantities of interest
# ---------------------------------------------------------------------------


@dataclass
class QoIRecord:
    area_alpha: float
    area_beta: float
    comp_alpha: float
    comp_beta: float
    char_length: float
    flags: tuple[str, ...] = ()

    def values(self) -> list[float]:
        return [self.area_alpha, self.area_beta, self.comp_alpha, self.comp_beta, self.char_length]


def radial_spectrum(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Radially averaged power spectrum on integer-wavenumber annuli 1..N/2.

    Returns (annulus index m, mean power); the zero mode is excluded.
    """
    n = c.shape[0]
    power = np.abs(np.fft.fft2(c - c.mean())) ** 2
    m = np.fft.fftfreq(n) * n
    radius = np.rint(np.sqrt(m[:, None] ** 2 + m[None, :] ** 2)).astype(np.int64)
    nbins = n // 2 + 1
    inside = radius < nbins
    sums = np.bincount(radius[inside], weights=power[inside], minlength=nbins)
    counts = np.bincount(radius[inside], minlength=nbins)
    idx = np.arange(1, nbins)
    return idx, sums[1:] / counts[1:]


def extract_qoi(f: CompositionField | np.ndarray, p: PhaseFieldParams) -> QoIRecord:
    c = f.c if isinstance(f, CompositionField) else np.asarray(f)
    threshold = 0.5 * (p.c_alpha + p.c_beta)
    alpha = c < threshold
    n_alpha = int(alpha.sum())
    n_beta = c.size - n_alpha
    flags = []
    mean = float(c.mean())
    if n_alpha:
        comp_alpha = float(c[alpha].mean())
    else:
        comp_alpha = mean
        flags.append("alpha_empty")
    if n_beta:
        comp_beta = float(c[~alpha].mean())
    else:
        comp_beta = mean
        flags.append("beta_empty")
    idx, power = radial_spectrum(c)
    total = power.sum()
    if total > 0:
        k_mean = float(np.sum(idx * power) / total)
        char_length = p.domain_l / k_mean
    else:
        char_length = p.domain_l
        flags.append("no_structure")
    return QoIRecord(n_alpha / c.size, n_beta / c.size, comp_alpha, comp_beta, char_length, tuple(flags))


def simulate_qoi(p: PhaseFieldParams, rng: RandomStream) -> QoIRecord:
    return extract_qoi(run(p, rng, snapshot_every=0).final, p)


def write_snapshot(path: Path, snap: Snapshot, p: PhaseFieldParams, extra: dict | None = None) -> None:
    """Grid as CSV plus a JSON sidecar with params, time, energy and mean."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path.with_suffix(".csv"), snap.c, delimiter=",", fmt="%.17g")
    meta = {"params": p.to_dict(), "time": snap.time, "energy": snap.energy, "mean": snap.mean, **(extra or {})}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
