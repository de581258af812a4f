"""Quantum feature layer: windowed encoding, circuit evolution, measurement.

The trace axis of a [B, C, T, S] map is unfolded into non-overlapping
windows of n_qubits samples, each window is angle-encoded, evolved through
every fixed random circuit, and measured; per-circuit expectations become
output channels. The layer is differentiable with respect to its input via
the parameter-shift rule.

The batched evaluator here keeps amplitudes as real float64 arrays (the
only gates used have real matrix entries), evolving all windows at once.
qsim remains the scalar single-state reference that this implementation is
tested against. Per-window values are independent of how the window axis
is chunked, so results are bit-identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .qsim import MAX_QUBITS, RandomCircuit

__all__ = [
    "QuantumLayerConfig",
    "unfold",
    "quantum_forward",
    "quantum_input_grad",
    "quantum_conv",
    "set_workers",
    "get_workers",
]

_WORKERS = 1


def set_workers(n: int) -> None:
    """Cap the number of threads used to evaluate window chunks."""
    global _WORKERS
    _WORKERS = max(1, int(n))


def get_workers() -> int:
    return _WORKERS


@dataclass(frozen=True)
class QuantumLayerConfig:
    """Shape and circuit parameters of one quantum feature layer.

    The unfolding window and stride are tied to the qubit count, so each
    window feeds exactly one register.
    """

    n_qubits: int = 4
    n_circuits: int = 4
    depth: int = 2
    seed: int = 0
    input_scale: float = 1.0
    window: int | None = None
    stride: int | None = None

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        if self.n_circuits < 1:
            raise ValueError("n_circuits must be >= 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not np.isfinite(self.input_scale):
            raise ValueError("input_scale must be finite")
        object.__setattr__(self, "window", self.n_qubits if self.window is None else self.window)
        object.__setattr__(self, "stride", self.n_qubits if self.stride is None else self.stride)
        if self.window != self.n_qubits or self.stride != self.n_qubits:
            raise ValueError("window and stride must equal n_qubits")

    def make_circuits(self) -> list[RandomCircuit]:
        return [RandomCircuit.generate(self.seed, i, self.depth, self.n_qubits)
                for i in range(self.n_circuits)]


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, ag.Tensor) else np.asarray(x)


def unfold(x, cfg: QuantumLayerConfig) -> np.ndarray:
    """Window the trace axis of [B, C, T, S] into rows of n_qubits samples.

    Rows are ordered lexicographically in (b, c, t, window); when S is not
    a multiple of the stride the trace axis is replicate-padded on the
    right to the next multiple.
    """
    arr = _as_array(x)
    if arr.ndim != 4:
        raise ag.ShapeError(f"unfold expects a 4-d input, got shape {arr.shape}")
    b, c, t, s = arr.shape
    k = cfg.window
    if s < k:
        raise ag.ShapeError(f"trace axis ({s}) is shorter than the window ({k})")
    pad = (-s) % cfg.stride
    if pad:
        arr = np.pad(arr, ((0, 0), (0, 0), (0, 0), (0, pad)), mode="edge")
    s_out = arr.shape[3] // cfg.stride
    return arr.reshape(b * c * t * s_out, k)


# ---------------------------------------------------------------------------
# batched real-amplitude evolution


def _ry_rows(amps: np.ndarray, qubit: int, theta, n_qubits: int) -> np.ndarray:
    """Apply an Ry to one qubit of a batch of real amplitude rows.

    theta may be a scalar (shared gate angle) or one angle per row.
    """
    half = 0.5 * np.asarray(theta, dtype=np.float64)
    c, s = np.cos(half), np.sin(half)
    m = amps.shape[0]
    a = amps.reshape((m,) + (2,) * n_qubits)
    axis = 1 + (n_qubits - 1 - qubit)
    a0 = np.take(a, 0, axis=axis)
    a1 = np.take(a, 1, axis=axis)
    if c.ndim:
        bshape = (m,) + (1,) * (n_qubits - 1)
        c = c.reshape(bshape)
        s = s.reshape(bshape)
    new0 = c * a0 - s * a1
    new1 = s * a0 + c * a1
    return np.stack([new0, new1], axis=axis).reshape(amps.shape)


def _cnot_rows(amps: np.ndarray, control: int, target: int, n_qubits: int) -> np.ndarray:
    k = np.arange(2 ** n_qubits)
    src = k[(((k >> control) & 1) == 1) & (((k >> target) & 1) == 0)]
    dst = src | (1 << target)
    out = amps.copy()
    out[:, src] = amps[:, dst]
    out[:, dst] = amps[:, src]
    return out


def _encode_rows(rows: np.ndarray) -> np.ndarray:
    """Product-state amplitudes for every row of encoding angles at once."""
    m, nq = rows.shape
    half = 0.5 * rows
    c, s = np.cos(half), np.sin(half)
    amps = np.ones((m, 1))
    for qubit in range(nq - 1, -1, -1):
        cs = np.stack([c[:, qubit], s[:, qubit]], axis=1)
        amps = (amps[:, :, None] * cs[:, None, :]).reshape(m, -1)
    return amps


def _circuit_matrix(circuit: RandomCircuit) -> np.ndarray:
    """Dense row-operator of a fixed circuit: row r is the evolved basis state r.

    Amplitude rows evolve as `amps @ matrix`. Legal because circuit angles
    are frozen, so the whole gate program collapses to one matrix.
    """
    nq = circuit.n_qubits
    mat = np.eye(2 ** nq)
    for layer in range(circuit.depth):
        for qubit in range(nq):
            mat = _ry_rows(mat, qubit, float(circuit.angles[layer, qubit]), nq)
        for control, target in circuit.entangler_layout[layer]:
            mat = _cnot_rows(mat, control, target, nq)
    return mat


def _expect_rows(amps: np.ndarray, target_qubit: int, n_qubits: int) -> np.ndarray:
    k = np.arange(2 ** n_qubits)
    signs = 1.0 - 2.0 * ((k >> target_qubit) & 1)
    return (amps * amps * signs).sum(axis=1)


def _eval_rows(rows: np.ndarray, matrices, target_qubit: int) -> np.ndarray:
    """Expectations for every (circuit, window): returns [n_circuits, m]."""
    nq = rows.shape[1]
    encoded = _encode_rows(rows)
    out = np.empty((len(matrices), rows.shape[0]))
    for i, mat in enumerate(matrices):
        out[i] = _expect_rows(encoded @ mat, target_qubit, nq)
    return out


def _eval_rows_chunked(rows: np.ndarray, matrices, target_qubit: int, workers: int) -> np.ndarray:
    m = rows.shape[0]
    if workers <= 1 or m < 2 * workers:
        return _eval_rows(rows, matrices, target_qubit)
    out = np.empty((len(matrices), m))
    bounds = np.linspace(0, m, workers + 1, dtype=int)
    spans = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def fill(span):
        lo, hi = span
        out[:, lo:hi] = _eval_rows(rows[lo:hi], matrices, target_qubit)

    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        list(pool.map(fill, spans))
    return out


# ---------------------------------------------------------------------------
# layer forward / backward


def _check_circuits(circuits, cfg: QuantumLayerConfig):
    if len(circuits) != cfg.n_circuits:
        raise ValueError(f"expected {cfg.n_circuits} circuits, got {len(circuits)}")
    for circuit in circuits:
        if circuit.n_qubits != cfg.n_qubits:
            raise ValueError(
                f"circuit acts on {circuit.n_qubits} qubits but the layer is "
                f"configured for {cfg.n_qubits}"
            )


def quantum_forward(x, circuits, cfg: QuantumLayerConfig, workers: int | None = None) -> np.ndarray:
    """Quantum feature map of [B, C, T, S]: one channel per circuit.

    Expectations are averaged over input channels, then repeated along the
    trace axis (and cropped) so the output [B, K, T, S] is spatially
    aligned with the input for channel-wise concatenation.
    """
    arr = _as_array(x).astype(np.float64, copy=False)
    _check_circuits(circuits, cfg)
    workers = get_workers() if workers is None else max(1, int(workers))
    b, c, t, s = arr.shape
    rows = unfold(arr, cfg) * cfg.input_scale
    matrices = [_circuit_matrix(circ) for circ in circuits]
    y = _eval_rows_chunked(rows, matrices, 0, workers)
    s_out = rows.shape[0] // (b * c * t)
    fmap = y.reshape(len(circuits), b, c, t, s_out).mean(axis=2)
    fmap = np.repeat(fmap, cfg.stride, axis=-1)[..., :s]
    return fmap.transpose(1, 0, 2, 3)


def quantum_input_grad(
    upstream: np.ndarray,
    x_shape: tuple,
    rows: np.ndarray,
    circuits,
    cfg: QuantumLayerConfig,
    workers: int | None = None,
) -> np.ndarray:
    """Input gradient of quantum_forward via the parameter-shift rule.

    `rows` must be the scaled window matrix saved from the forward pass.
    """
    workers = get_workers() if workers is None else max(1, int(workers))
    b, c, t, s = x_shape
    k = len(circuits)
    nq = cfg.n_qubits
    s_out = rows.shape[0] // (b * c * t)
    padded = s_out * cfg.stride

    up = np.zeros((b, k, t, padded))
    up[..., :s] = upstream
    per_window = up.reshape(b, k, t, s_out, cfg.stride).sum(axis=-1)
    # channel-mean adjoint: every input channel sees the same coefficient / C
    coef = np.repeat(per_window[:, None] / c, c, axis=1)  # [B, C, K, T, S']
    coef_flat = coef.transpose(2, 0, 1, 3, 4).reshape(k, rows.shape[0])

    matrices = [_circuit_matrix(circ) for circ in circuits]
    grad_rows = np.zeros_like(rows)
    half_pi = 0.5 * np.pi
    for j in range(nq):
        shifted = rows.copy()
        shifted[:, j] += half_pi
        plus = _eval_rows_chunked(shifted, matrices, 0, workers)
        shifted[:, j] -= np.pi
        minus = _eval_rows_chunked(shifted, matrices, 0, workers)
        dy = 0.5 * (plus - minus)  # [K, M]
        grad_rows[:, j] = (coef_flat * dy).sum(axis=0)
    grad_rows *= cfg.input_scale

    grad_pad = grad_rows.reshape(b, c, t, padded)
    grad = grad_pad[..., :s].copy()
    if padded > s:
        grad[..., s - 1] += grad_pad[..., s:].sum(axis=-1)
    return grad


def quantum_conv(x: ag.Tensor, circuits, cfg: QuantumLayerConfig, workers: int | None = None) -> ag.Tensor:
    """Autograd-integrated quantum feature layer on a [B, C, T, S] tensor."""
    arr = x.data.astype(np.float64, copy=False)
    rows = unfold(arr, cfg) * cfg.input_scale
    out = quantum_forward(arr, circuits, cfg, workers=workers).astype(x.data.dtype)
    shape = x.shape

    def bwd(g):
        gin = quantum_input_grad(g.astype(np.float64), shape, rows, circuits, cfg, workers=workers)
        return (gin.astype(x.data.dtype),)

    return ag._result(out, (x,), bwd)

