"""
Sampling Module
Exact samplers for alarm times, sojourns and Gamma weights, driven by
reproducible random streams keyed by (seed, replica, vertex)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.config import SIMULATION_DEFAULTS
from src.exceptions import SamplingDomainError

logger = logging.getLogger(__name__)

# Stream purposes share a (replica, vertex) key but never overlap
PURPOSE_PATH = 0
PURPOSE_ALARMS = 1
PURPOSE_WEIGHTS = 2
PURPOSE_DIFFUSION = 3

ALARM_METHODS = ('sequential', 'poisson_embed')


@dataclass
class RngStream:
    """
    Buffered random stream.

    Identical (seed, replica, vertex, purpose) reproduce identical draws;
    distinct keys are independent children of one SeedSequence.
    """

    seed: int
    replica: int = 0
    vertex: Optional[int] = None
    purpose: int = PURPOSE_PATH
    block: int = SIMULATION_DEFAULTS['rng_block']
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.replica < 0:
            raise SamplingDomainError("seed and replica must be non-negative")
        slot = 0 if self.vertex is None else self.vertex + 1
        sequence = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.replica), slot, int(self.purpose))
        )
        self.generator = np.random.Generator(np.random.PCG64(sequence))
        self._exp: List[float] = []
        self._exp_pos = 0
        self._unif: List[float] = []
        self._unif_pos = 0

    @property
    def stream_id(self):
        return (self.replica, 'global' if self.vertex is None else self.vertex, self.purpose)

    def exponential(self) -> float:
        """One Exp(1) draw as -log(u) with u in (0, 1]"""
        if self._exp_pos >= len(self._exp):
            u = self.generator.random(self.block)
            self._exp = (-np.log1p(-u)).tolist()
            self._exp_pos = 0
        value = self._exp[self._exp_pos]
        self._exp_pos += 1
        return value

    def uniform(self) -> float:
        """One draw from the open interval (0, 1)"""
        while True:
            if self._unif_pos >= len(self._unif):
                self._unif = self.generator.random(self.block).tolist()
                self._unif_pos = 0
            value = self._unif[self._unif_pos]
            self._unif_pos += 1
            if value > 0.0:
                return value

    def exponentials(self, n: int) -> np.ndarray:
        return -np.log1p(-self.generator.random(n))

    def child(self, vertex: Optional[int] = None, purpose: int = PURPOSE_PATH) -> 'RngStream':
        """Sibling stream of the same replica"""
        return RngStream(self.seed, self.replica, vertex, purpose, self.block)


def derive_seed(seed: int, attempt: int) -> int:
    """Fresh 63-bit seed for a repeated run, a pure function of (seed, attempt)"""
    state = np.random.SeedSequence([int(seed), int(attempt)]).generate_state(1, np.uint64)[0]
    return int(state) >> 1


@dataclass
class AlarmSequence:
    """Increasing alarm times of one vertex, in neighbor-clock units"""

    vertex: Optional[int]
    alarms: np.ndarray


def _check_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise SamplingDomainError(f"{name} must be positive and finite, got {value}")


def alarm_increment(W: float, T: float, e: float) -> float:
    """
    Next alarm after T given the Exp(1) driver e.

    The increment log1p(e e^{-T} / W) is formed with logaddexp, so it never
    overflows; once it drops below one ulp of T the result is the next float
    above T, keeping alarms strictly increasing.
    """
    step = float(np.logaddexp(0.0, math.log(e) - T - math.log(W)))
    return max(T + step, math.nextafter(T, math.inf))


def alarm_inverse_cdf(W: float, T: float, u: float) -> float:
    """
    Inverse of F(t) = 1 - exp(-W (e^t - e^T)) on t > T.

    Computed as T + log1p(-log(1-u) e^{-T} / W) so it stays finite for large T.
    """
    _check_positive('W', W)
    if not 0.0 < u < 1.0:
        raise SamplingDomainError(f"u must lie in (0, 1), got {u}")
    return alarm_increment(W, T, -math.log1p(-u))


class AlarmStream:
    """
    Lazily extended alarm times of a single vertex.

    Methods:
        sequential    - Theta_{k+1} drawn from F^{(Theta_k)} by inverse CDF
        poisson_embed - W (e^{Theta_k} - 1) = xi_1 + ... + xi_k
        vrrw          - Theta_k = sum_{l<k} xi_l / (a + l)

    The start vertex has a first alarm at 0; for the vrrw clock the rates
    after that alarm start at a + 1.
    """

    def __init__(
        self,
        rng: RngStream,
        method: str,
        weight: float = 1.0,
        shape: float = 1.0,
        start: bool = False,
    ):
        if method not in ALARM_METHODS + ('vrrw',):
            raise SamplingDomainError(f"unknown alarm method '{method}'")
        _check_positive('weight', weight)
        _check_positive('shape', shape)
        self.rng = rng
        self.method = method
        self.weight = weight
        self.shape = shape
        self._last = 0.0
        self._level = 0.0
        self._index = 1 if start else 0
        self._pending_zero = start

    def next(self) -> float:
        if self._pending_zero:
            self._pending_zero = False
            return 0.0
        if self.method == 'sequential':
            self._last = alarm_inverse_cdf(self.weight, self._last, self.rng.uniform())
        elif self.method == 'poisson_embed':
            self._level += self.rng.exponential()
            self._last = math.log1p(self._level / self.weight)
        else:
            self._last += self.rng.exponential() / (self.shape + self._index)
            self._index += 1
        return self._last


def alarm_sequence(
    W: float,
    n: int,
    rng: RngStream,
    method: str = 'sequential',
    start: bool = False,
    vertex: Optional[int] = None,
) -> AlarmSequence:
    """First n alarm times of a cVRRW clock with weight W"""
    if n < 1:
        raise SamplingDomainError(f"n must be >= 1, got {n}")
    if method not in ALARM_METHODS:
        raise SamplingDomainError(f"method must be one of {ALARM_METHODS}, got '{method}'")
    stream = AlarmStream(rng, method, weight=W, start=start)
    return AlarmSequence(vertex, np.array([stream.next() for _ in range(n)]))


def vrrw_alarm_sequence(
    a: float,
    n: int,
    rng: RngStream,
    start: bool = False,
    vertex: Optional[int] = None,
) -> AlarmSequence:
    """First n alarm times of a VRRW clock with initial local time a"""
    if n < 1:
        raise SamplingDomainError(f"n must be >= 1, got {n}")
    stream = AlarmStream(rng, 'vrrw', shape=a, start=start)
    return AlarmSequence(vertex, np.array([stream.next() for _ in range(n)]))


def sample_sojourn(logZ: float, rng: RngStream) -> float:
    """
    Holding time when the total exit rate is Z e^s after s time units.

    Survival function exp(-Z (e^s - 1)); Z enters only through log Z.
    """
    if math.isnan(logZ) or logZ == -math.inf:
        raise SamplingDomainError(f"logZ must be finite, got {logZ}")
    if logZ == math.inf:
        return 0.0
    e = rng.exponential()
    if e == 0.0:
        return 0.0
    return float(np.logaddexp(0.0, math.log(e) - logZ))


def sample_gamma_weights(a: Sequence[float], rng: RngStream) -> np.ndarray:
    """Independent Gamma(a_i, 1) draws"""
    shapes = np.asarray(a, dtype=float)
    if shapes.ndim != 1 or not np.all(np.isfinite(shapes)) or np.any(shapes <= 0):
        raise SamplingDomainError(f"Gamma shapes must be positive, got {list(shapes)}")
    return rng.generator.standard_gamma(shapes)
