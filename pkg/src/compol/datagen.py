"""Seeded coupled-PDE data generation.

Initial conditions are stationary Gaussian random fields sampled
spectrally on the periodic unit domain.  Time integration is ETDRK4
with the diffusion part handled exactly per Fourier mode and the
reaction terms evaluated pseudo-spectrally in physical space, all in
float64.  1-D systems are solved on a 4x finer grid and spectrally
subsampled to the stored resolution; the 2-D system is solved directly
at the stored resolution.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from . import fft as K

__all__ = [
    "GrfSpec", "SystemSpec", "BlowUpError",
    "sample_grf", "phi_coefficients", "etdrk4_solve",
    "spectral_subsample", "initial_conditions", "generate_dataset",
    "system_spec", "SYSTEM_NAMES",
]


class BlowUpError(RuntimeError):
    """Integration produced non-finite values.

    ``step`` is the 1-based step index; ``samples`` lists the offending
    batch indices (global sample ids once re-raised by the generator).
    """

    def __init__(self, message: str, step: int, samples: "list[int]"):
        super().__init__(message)
        self.step = step
        self.samples = samples


def _check_pow2(n: int, what: str) -> None:
    if n < 2 or n & (n - 1):
        raise ValueError(f"{what} must be a power of two >= 2, got {n}")


# ---------------------------------------------------------------------------
# Gaussian random fields


@dataclass(frozen=True)
class GrfSpec:
    """Squared-exponential stationary field on the periodic unit domain."""

    dim: int
    resolution: int
    length_scale: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        _check_pow2(self.resolution, "resolution")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")


def _covariance_eigenvalues(spec: GrfSpec) -> np.ndarray:
    """Eigenvalues of the circulant covariance = FFT of one kernel row."""
    n = spec.resolution
    j = np.arange(n)
    d = np.minimum(j, n - j) / n
    if spec.dim == 1:
        row = spec.amplitude ** 2 * np.exp(-d ** 2 / (2.0 * spec.length_scale ** 2))
    else:
        d2 = d[:, None] ** 2 + d[None, :] ** 2
        row = spec.amplitude ** 2 * np.exp(-d2 / (2.0 * spec.length_scale ** 2))
    lam = K.fft(row.astype(np.complex128), tuple(range(-spec.dim, 0))).real
    # The periodic SE kernel is positive definite up to roundoff; tiny
    # negative eigenvalues are clipped so sqrt stays real.
    return np.maximum(lam, 0.0)


def sample_grf(spec: GrfSpec, seed, count: int) -> np.ndarray:
    """Draw ``count`` independent fields [count, N(, N)], mean 0, variance sigma^2.

    Each Fourier mode gets an independent complex Gaussian scaled by the
    square root of the kernel's spectral density; the real part of the
    inverse transform is kept, with a sqrt(2) factor restoring variance.
    """
    rng = seed if isinstance(seed, np.random.Generator) else \
        np.random.default_rng(seed)
    lam = _covariance_eigenvalues(spec)
    n_tot = lam.size
    shape = (count,) + lam.shape
    xi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    coef = np.sqrt(n_tot * lam) * xi
    axes = tuple(range(-spec.dim, 0))
    out = np.sqrt(2.0) * K.ifft(coef, axes).real
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# phi functions


def phi_coefficients(z, contour_points: int = 32):
    """phi_0..phi_3 evaluated per entry of ``z`` by contour averaging.

    phi_0 = e^z directly; phi_1..phi_3 are means of the analytic
    expressions over a radius-1 circle around each z, which sidesteps
    the removable singularity at 0.  Real input yields real output.
    """
    if contour_points < 16:
        raise ValueError("contour_points must be >= 16")
    z = np.asarray(z)
    was_real = not np.iscomplexobj(z)
    theta = 2.0 * np.pi * (np.arange(contour_points) + 0.5) / contour_points
    ring = np.exp(1j * theta)
    zz = z[..., None].astype(np.complex128) + ring
    ez = np.exp(zz)
    phi1 = (ez - 1.0) / zz
    phi2 = (ez - 1.0 - zz) / zz ** 2
    phi3 = (ez - 1.0 - zz - 0.5 * zz ** 2) / zz ** 3
    phi0 = np.exp(z)
    out = (phi0, phi1.mean(-1), phi2.mean(-1), phi3.mean(-1))
    if was_real:
        out = tuple(np.ascontiguousarray(p.real) for p in out)
    return out


# ---------------------------------------------------------------------------
# system definitions


@dataclass
class SystemSpec:
    """One coupled reaction-diffusion (or Burgers) system, fully pinned.

    ``params`` carries every reaction coefficient plus any initial-
    condition shaping constants so overrides land in the manifest.
    """

    system: str
    params: dict = field(default_factory=dict)
    horizon: float = 1.0
    dt: float = 1e-2
    resolution: int = 256
    grf_length_scale: float = 0.1
    grf_sigma: float = 1.0
    fine_factor: int = 4
    domain_size: float = 1.0

    def __post_init__(self):
        if self.system not in SYSTEM_NAMES:
            raise ValueError(f"unknown system {self.system!r}")
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("horizon and dt must be positive")
        if not self.domain_size > 0:
            raise ValueError("domain_size must be positive")
        _check_pow2(self.resolution, "resolution")
        for name, value in self.diffusivities().items():
            if value < 0:
                raise ValueError(f"diffusivity {name} must be >= 0, got {value}")

    @property
    def dim(self) -> int:
        return 2 if self.system == "gs" else 1

    @property
    def processes(self) -> int:
        return {"lv": 2, "bz": 3, "gs": 2, "burgers": 1}[self.system]

    @property
    def channel_names(self) -> "list[str]":
        return {"lv": ["u", "v"], "bz": ["u", "v", "w"],
                "gs": ["u", "v"], "burgers": ["u"]}[self.system]

    @property
    def solve_resolution(self) -> int:
        return self.resolution * (self.fine_factor if self.dim == 1 else 1)

    def diffusivities(self) -> "dict[str, float]":
        p = self.params
        if self.system == "lv":
            return {"du": p["du"], "dv": p["dv"]}
        if self.system == "bz":
            return {"eps1": p["eps1"], "eps2": p["eps2"], "eps3": p["eps3"]}
        if self.system == "gs":
            return {"du": p["du"], "dv": p["dv"]}
        return {"nu": p["nu"]}

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "params": {k: float(v) for k, v in sorted(self.params.items())},
            "horizon": float(self.horizon),
            "dt": float(self.dt),
            "resolution": int(self.resolution),
            "grf_length_scale": float(self.grf_length_scale),
            "grf_sigma": float(self.grf_sigma),
            "fine_factor": int(self.fine_factor),
            "domain_size": float(self.domain_size),
            "dim": self.dim,
            "processes": self.processes,
            "channel_names": self.channel_names,
            "init_recipe": INIT_RECIPES[self.system],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        keys = ("system", "params", "horizon", "dt", "resolution",
                "grf_length_scale", "grf_sigma", "fine_factor", "domain_size")
        return cls(**{k: d[k] for k in keys if k in d})


SYSTEM_NAMES = ("lv", "bz", "gs", "burgers")

INIT_RECIPES = {
    "lv": "per-process GRF, shifted by init_shift and clamped at 0",
    "bz": "per-process GRF clamped at 0",
    "gs": "one shared GRF g: u = 1 - init_scale*max(g,0), v = init_scale*max(g,0)",
    "burgers": "raw GRF",
}

_DEFAULTS = {
    "lv": dict(
        params={"a": 0.01, "b": 0.01, "c": 0.01, "d": 0.01,
                "du": 0.01, "dv": 0.01, "init_shift": 2.0},
        horizon=20.0, dt=1e-2, resolution=256,
        grf_length_scale=0.1, grf_sigma=1.0, fine_factor=4),
    "bz": dict(
        params={"eps1": 1e-2, "eps2": 1e-2, "eps3": 5e-3},
        horizon=0.5, dt=1e-3, resolution=256,
        grf_length_scale=0.03, grf_sigma=1.0, fine_factor=4),
    # Unit grid spacing (domain 64 at the default 64x64 mesh): with these
    # diffusivities a unit domain would damp every non-mean mode by e^-95
    # over the horizon and no patterns could form.
    "gs": dict(
        params={"du": 0.12, "dv": 0.06, "f": 0.054, "k": 0.063,
                "init_scale": 0.5},
        horizon=20.0, dt=2e-2, resolution=64,
        grf_length_scale=0.1, grf_sigma=1.0, fine_factor=1,
        domain_size=64.0),
    "burgers": dict(
        params={"nu": 0.01},
        horizon=1.0, dt=2.5e-4, resolution=256,
        grf_length_scale=0.1, grf_sigma=1.0, fine_factor=4),
}

_SCALAR_OVERRIDES = ("horizon", "dt", "resolution", "grf_length_scale",
                     "grf_sigma", "fine_factor", "domain_size")


def system_spec(name: str, resolution: int | None = None,
                overrides: "dict | None" = None) -> SystemSpec:
    """Build a SystemSpec from the defaults table plus overrides.

    Override keys may name either a reaction/init parameter or one of
    the scalar fields (horizon, dt, resolution, grf_*, fine_factor).
    """
    if name not in _DEFAULTS:
        raise ValueError(f"unknown system {name!r}; choose from {SYSTEM_NAMES}")
    base = _DEFAULTS[name]
    params = dict(base["params"])
    scalars = {k: base[k] for k in _SCALAR_OVERRIDES if k in base}
    if resolution is not None:
        scalars["resolution"] = int(resolution)
    for key, value in (overrides or {}).items():
        if key in _SCALAR_OVERRIDES:
            cast = int if key in ("resolution", "fine_factor") else float
            scalars[key] = cast(value)
        elif key in params:
            params[key] = float(value)
        else:
            raise ValueError(f"unknown override {key!r} for system {name!r}")
    # constructed last so __post_init__ validates the overridden values too
    return SystemSpec(system=name, params=params, **scalars)


def _nonlinearity(spec: SystemSpec, n: int):
    """Reaction terms (everything except diffusion) on [B, M, *grid]."""
    p = spec.params
    if spec.system == "lv":
        a, b, c, d = p["a"], p["b"], p["c"], p["d"]

        def f(u):
            x, y = u[:, 0], u[:, 1]
            return np.stack([a * x - b * x * y, c * x * y - d * y], axis=1)
    elif spec.system == "bz":

        def f(u):
            x, y, w = u[:, 0], u[:, 1], u[:, 2]
            return np.stack([x + y - x * y - x * x, w - y - x * y, x - w], axis=1)
    elif spec.system == "gs":
        fr, kr = p["f"], p["k"]

        def f(u):
            x, y = u[:, 0], u[:, 1]
            xyy = x * y * y
            return np.stack([-xyy + fr * (1.0 - x), xyy - (fr + kr) * y], axis=1)
    else:  # burgers: -u u_x with the derivative taken spectrally
        ik = (2j * np.pi / spec.domain_size) * np.arange(n // 2 + 1, dtype=np.float64)

        def f(u):
            x = u[:, 0]
            ux = K.irfft(K.rfft(x, (-1,)) * ik, (-1,))
            return (-x * ux)[:, None]
    return f


def _linear_symbol(spec: SystemSpec, n: int) -> np.ndarray:
    """Diffusion eigenvalues -D_m |2 pi k / L|^2 on the rfft grid, [M, *kshape]."""
    diff = np.asarray(list(spec.diffusivities().values()), dtype=np.float64)
    w = 2.0 * np.pi / spec.domain_size
    if spec.dim == 1:
        k = np.arange(n // 2 + 1, dtype=np.float64)
        lap = -((w * k) ** 2)
        return diff[:, None] * lap
    k1 = np.fft.fftfreq(n, d=1.0 / n)
    k2 = np.arange(n // 2 + 1, dtype=np.float64)
    lap = -((w * k1[:, None]) ** 2 + (w * k2[None, :]) ** 2)
    return diff[:, None, None] * lap


def etdrk4_solve(spec: SystemSpec, u0: np.ndarray, record: str = "final",
                 dt: float | None = None, zero_nonlinearity: bool = False,
                 contour_points: int = 32) -> np.ndarray:
    """Integrate to the horizon; returns the final state or the trajectory.

    ``u0`` is [M, *grid] or [B, M, *grid]; the grid fixes the solve
    resolution (power of two).  ``record='trajectory'`` returns
    [steps+1, (B,), M, *grid] including the initial state.
    ``zero_nonlinearity`` switches the reaction terms off (test hook).
    """
    if record not in ("final", "trajectory"):
        raise ValueError(f"record must be 'final' or 'trajectory', got {record!r}")
    u0 = np.asarray(u0, dtype=np.float64)
    batched = u0.ndim == spec.dim + 2
    if not batched and u0.ndim != spec.dim + 1:
        raise ValueError(f"u0 must be [M, *grid] or [B, M, *grid], got {u0.shape}")
    u = u0 if batched else u0[None]
    if u.shape[1] != spec.processes:
        raise ValueError(f"expected {spec.processes} processes, got {u.shape[1]}")
    n = u.shape[-1]
    _check_pow2(n, "grid resolution")

    h = spec.dt if dt is None else float(dt)
    n_steps = max(1, int(round(spec.horizon / h)))
    h = spec.horizon / n_steps

    axes = tuple(range(-spec.dim, 0))
    hL = h * _linear_symbol(spec, n)[None]
    e_full, p1f, p2f, p3f = phi_coefficients(hL, contour_points)
    e_half, p1h, _, _ = phi_coefficients(0.5 * hL, contour_points)
    q = 0.5 * h * p1h
    f1 = h * (p1f - 3.0 * p2f + 4.0 * p3f)
    f2 = h * (p2f - 2.0 * p3f)
    f3 = h * (4.0 * p3f - p2f)

    if zero_nonlinearity:
        react = None
    else:
        react = _nonlinearity(spec, n)

    def nl(vh):
        if react is None:
            return np.zeros_like(vh)
        return K.rfft(react(K.irfft(vh, axes)), axes)

    v = K.rfft(u, axes)
    traj = None
    if record == "trajectory":
        traj = np.empty((n_steps + 1,) + u.shape, dtype=np.float64)
        traj[0] = u
    for step in range(1, n_steps + 1):
        nv = nl(v)
        a = e_half * v + q * nv
        na = nl(a)
        b = e_half * v + q * na
        nb = nl(b)
        c = e_half * a + q * (2.0 * nb - nv)
        nc = nl(c)
        v = e_full * v + f1 * nv + 2.0 * f2 * (na + nb) + f3 * nc
        ok = np.isfinite(v).reshape(v.shape[0], -1).all(axis=1)
        if not ok.all():
            bad = [int(i) for i in np.flatnonzero(~ok)]
            raise BlowUpError(
                f"non-finite state at step {step} of {n_steps} "
                f"(t={step * h:.6g}) for sample(s) {bad}", step, bad)
        if traj is not None:
            traj[step] = K.irfft(v, axes)
    if record == "trajectory":
        return traj if batched else traj[:, 0]
    out = K.irfft(v, axes)
    return out if batched else out[0]


def spectral_subsample(u: np.ndarray, target: int) -> np.ndarray:
    """Band-limit the last axis to ``target`` points (1-D fields only).

    Equals pointwise decimation for fields already band-limited to the
    target Nyquist frequency.
    """
    n = u.shape[-1]
    _check_pow2(target, "target resolution")
    if target > n or n % target:
        raise ValueError(f"target {target} must divide the source extent {n}")
    if target == n:
        return np.asarray(u, dtype=np.float64).copy()
    vh = K.rfft(np.asarray(u, dtype=np.float64), (-1,))
    vc = vh[..., : target // 2 + 1] * (target / n)
    return K.irfft(np.ascontiguousarray(vc), (-1,), n=target)


# ---------------------------------------------------------------------------
# dataset assembly


def initial_conditions(spec: SystemSpec, rng: np.random.Generator,
                       n: int) -> np.ndarray:
    """Draw one sample's initial fields [M, *grid] at resolution ``n``."""
    g = GrfSpec(spec.dim, n, spec.grf_length_scale, spec.grf_sigma)
    if spec.system == "lv":
        raw = sample_grf(g, rng, 2)
        return np.maximum(raw + spec.params["init_shift"], 0.0)
    if spec.system == "bz":
        # Concentrations: the positive orthant is forward-invariant for the
        # reaction (u'=v>=0 at u=0, etc.) but negative wells of u feed the
        # -u^2 term and diverge in finite time, so clamp the draw at zero.
        return np.maximum(sample_grf(g, rng, 3), 0.0)
    if spec.system == "gs":
        pos = np.maximum(sample_grf(g, rng, 1)[0], 0.0)
        s = spec.params["init_scale"]
        return np.stack([1.0 - s * pos, s * pos])
    return sample_grf(g, rng, 1)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _generate_chunk(spec_dict: dict, seed: int, start: int,
                    stop: int) -> "tuple[np.ndarray, np.ndarray]":
    """Solve samples [start, stop); returns float32 (inputs, outputs).

    Both are [b, M, *grid] at the stored resolution.  Each sample's
    randomness comes only from (seed, index), so any chunking or worker
    schedule reproduces identical bits.
    """
    spec = SystemSpec.from_dict(spec_dict)
    fine = spec.solve_resolution
    ics = np.stack([initial_conditions(spec, _sample_rng(seed, i), fine)
                    for i in range(start, stop)])
    try:
        finals = etdrk4_solve(spec, ics, record="final")
    except BlowUpError as e:
        raise BlowUpError(
            f"sample(s) {[start + j for j in e.samples]}: {e}", e.step,
            [start + j for j in e.samples]) from e
    if spec.dim == 1 and fine != spec.resolution:
        ics = spectral_subsample(ics, spec.resolution)
        finals = spectral_subsample(finals, spec.resolution)
    return ics.astype(np.float32), finals.astype(np.float32)


def _resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("COMPOL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def generate_dataset(spec: SystemSpec, n_samples: int, seed: int, out_dir: str,
                     chunk_size: int = 8, workers: int | None = None) -> dict:
    """Generate, solve, and write a dataset; returns the manifest.

    Chunks are fixed by ``chunk_size`` regardless of worker count, and
    every sample is seeded by (seed, index) alone, so serial and
    parallel runs write bit-identical files.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    spec_dict = spec.to_dict()
    bounds = [(s, min(s + chunk_size, n_samples))
              for s in range(0, n_samples, chunk_size)]
    workers_n = min(_resolve_workers(workers), max(1, len(bounds)))
    if workers_n > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers_n) as pool:
            parts = list(pool.map(_generate_chunk, [spec_dict] * len(bounds),
                                  [seed] * len(bounds),
                                  [b[0] for b in bounds], [b[1] for b in bounds]))
    else:
        parts = [_generate_chunk(spec_dict, seed, a, b) for a, b in bounds]

    grid = (spec.resolution,) * spec.dim
    if parts:
        all_in = np.concatenate([p[0] for p in parts])
        all_out = np.concatenate([p[1] for p in parts])
    else:
        all_in = np.zeros((0, spec.processes) + grid, dtype=np.float32)
        all_out = np.zeros_like(all_in)
    # one stored channel per process
    inputs = [all_in[:, m:m + 1] for m in range(spec.processes)]
    outputs = [all_out[:, m:m + 1] for m in range(spec.processes)]

    meta = {
        "system": spec_dict,
        "seed": int(seed),
        "chunk_size": int(chunk_size),
        "channel_names": [[c] for c in spec.channel_names],
    }
    return dataio.write_dataset(out_dir, inputs, outputs, meta)
