"""GRU and NC-GRU cells with hand-derived backward passes.

Both variants share the gate structure

    r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
    u_t = sigmoid(W_u x_t + U_u h_{t-1} + b_u)
    h_t = (1 - u_t) * h_{t-1} + u_t * c_t

and differ only in the candidate path. The plain GRU uses

    c_t = tanh(W_c x_t + U_c (r_t * h_{t-1}) + b_c)

while the NC-GRU drops the additive candidate bias and routes the
pre-activation through modReLU instead,

    c_t = modrelu(W_c x_t + U_c (r_t * h_{t-1}), b)
    modrelu(z, b) = sign(z) * max(|z| + b, 0)

whose per-entry bias b plays the role the additive bias played for tanh.
modReLU preserves the norm direction of its input, which is what lets an
orthogonal U_c carry signal across long horizons without squashing it.

State convention: column vectors. A hidden state is (n,) or, batched,
(n, B) with examples in columns. h_0 is always the zero vector. All
activations of a step are cached on the way forward so the backward pass
is a pure function of (params, cache, incoming gradient).

The backward pass and the analytic one-step Jacobian
d h_t / d h_{t-1} are derived by hand from the equations above; finite
differences in the test-suite pin them down. modReLU is flat at its kink
(|z| + b == 0), where the subgradient 0 is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

_VARIANTS = ("gru", "ncgru")

# A candidate pre-activation within this distance of the modReLU kink makes
# finite-difference checks unreliable; jacobian_h flags it.
_KINK_ATOL = 1e-6


def sigmoid(x: np.ndarray) -> np.ndarray:
    # evaluate on the side that cannot overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def modrelu(z: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sign(z) * relu(|z| + b) with a broadcastable bias."""
    return np.sign(z) * np.maximum(np.abs(z) + b, 0.0)


@dataclass
class CellParams:
    """Weights of one recurrent cell.

    w_* map inputs (n, m); u_* map the previous hidden state (n, n);
    b_r and b_u are gate biases. The candidate bias is variant-specific:
    b_c for gru, modrelu_b for ncgru; the unused one stays None.
    ortho_set names the recurrent weights a harness keeps orthogonal
    ("u_r", "u_u", "u_c"); the cell itself treats them as ordinary arrays.
    """

    variant: str
    w_r: np.ndarray
    w_u: np.ndarray
    w_c: np.ndarray
    u_r: np.ndarray
    u_u: np.ndarray
    u_c: np.ndarray
    b_r: np.ndarray
    b_u: np.ndarray
    b_c: np.ndarray | None = None
    modrelu_b: np.ndarray | None = None
    ortho_set: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.u_r.shape[0]

    @property
    def m(self) -> int:
        return self.w_r.shape[1]

    @classmethod
    def init(cls, variant: str, n: int, m: int, seed: int,
             ortho_set: tuple[str, ...] = ()) -> "CellParams":
        """Glorot-uniform weights, zero biases. Recurrent weights listed in
        ortho_set are expected to be overwritten by the caller."""
        if variant not in _VARIANTS:
            raise ContractError(f"unknown variant {variant!r}, expected one of {_VARIANTS}")
        for name in ortho_set:
            if name not in ("u_r", "u_u", "u_c"):
                raise ContractError(f"ortho_set entry {name!r} is not a recurrent weight")
        rng = np.random.default_rng(seed)

        def glorot(rows: int, cols: int) -> np.ndarray:
            lim = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-lim, lim, (rows, cols))

        p = cls(
            variant=variant,
            w_r=glorot(n, m), w_u=glorot(n, m), w_c=glorot(n, m),
            u_r=glorot(n, n), u_u=glorot(n, n), u_c=glorot(n, n),
            b_r=np.zeros(n), b_u=np.zeros(n),
            b_c=np.zeros(n) if variant == "gru" else None,
            modrelu_b=np.zeros(n) if variant == "ncgru" else None,
            ortho_set=tuple(ortho_set),
        )
        return p

    def named_arrays(self):
        """(name, array) pairs for every trainable tensor, in a fixed order."""
        pairs = [("w_r", self.w_r), ("w_u", self.w_u), ("w_c", self.w_c),
                 ("u_r", self.u_r), ("u_u", self.u_u), ("u_c", self.u_c),
                 ("b_r", self.b_r), ("b_u", self.b_u)]
        if self.variant == "gru":
            pairs.append(("b_c", self.b_c))
        else:
            pairs.append(("modrelu_b", self.modrelu_b))
        return pairs

    def validate(self) -> None:
        if self.variant not in _VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        n, m = self.n, self.m
        for name, arr in self.named_arrays():
            if arr is None:
                raise ContractError(f"{name} missing for variant {self.variant!r}")
            want = {"w": (n, m), "u": (n, n), "b": (n,), "m": (n,)}[name[0]]
            if arr.shape != want:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {want}")
        if self.variant == "gru" and self.modrelu_b is not None:
            raise ContractError("gru cell must not carry modrelu_b")
        if self.variant == "ncgru" and self.b_c is not None:
            raise ContractError("ncgru cell must not carry an additive candidate bias")


@dataclass
class CellGrads:
    """Gradient accumulator mirroring CellParams."""

    w_r: np.ndarray
    w_u: np.ndarray
    w_c: np.ndarray
    u_r: np.ndarray
    u_u: np.ndarray
    u_c: np.ndarray
    b_r: np.ndarray
    b_u: np.ndarray
    b_c: np.ndarray | None = None
    modrelu_b: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, p: CellParams) -> "CellGrads":
        return cls(
            w_r=np.zeros_like(p.w_r), w_u=np.zeros_like(p.w_u), w_c=np.zeros_like(p.w_c),
            u_r=np.zeros_like(p.u_r), u_u=np.zeros_like(p.u_u), u_c=np.zeros_like(p.u_c),
            b_r=np.zeros_like(p.b_r), b_u=np.zeros_like(p.b_u),
            b_c=np.zeros_like(p.b_c) if p.b_c is not None else None,
            modrelu_b=np.zeros_like(p.modrelu_b) if p.modrelu_b is not None else None,
        )

    def named_arrays(self):
        pairs = [("w_r", self.w_r), ("w_u", self.w_u), ("w_c", self.w_c),
                 ("u_r", self.u_r), ("u_u", self.u_u), ("u_c", self.u_c),
                 ("b_r", self.b_r), ("b_u", self.b_u)]
        if self.b_c is not None:
            pairs.append(("b_c", self.b_c))
        if self.modrelu_b is not None:
            pairs.append(("modrelu_b", self.modrelu_b))
        return pairs


@dataclass
class StepCache:
    """Everything the backward pass needs about one forward step.

    Arrays are stored as columns (n, B) even when the caller passed
    vectors; batched records which convention the caller used. variant
    tags which forward produced the cache so a mismatched backward is
    rejected instead of silently using the wrong candidate slope.
    """

    x_t: np.ndarray
    h_prev: np.ndarray
    pre_r: np.ndarray
    pre_u: np.ndarray
    pre_c: np.ndarray
    r_t: np.ndarray
    u_t: np.ndarray
    c_t: np.ndarray
    h_t: np.ndarray
    batched: bool
    variant: str


def _columns(v: np.ndarray, what: str) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        return v[:, None], False
    if v.ndim == 2:
        return v, True
    raise ShapeError(f"{what} must be 1-D or 2-D, got ndim={v.ndim}")


def cell_forward(p: CellParams, x_t: np.ndarray, h_prev: np.ndarray
                 ) -> tuple[np.ndarray, StepCache]:
    """One step of the cell named by p.variant.

    x_t is (m,) or (m, B), h_prev is (n,) or (n, B) with matching
    batchedness; returns h_t in the caller's convention plus the cache.
    """
    x, bx = _columns(x_t, "x_t")
    h, bh = _columns(h_prev, "h_prev")
    if bx != bh:
        raise ShapeError("x_t and h_prev must both be vectors or both be batched")
    if x.shape[0] != p.m:
        raise ShapeError(f"x_t has {x.shape[0]} features, cell expects {p.m}")
    if h.shape[0] != p.n:
        raise ShapeError(f"h_prev has {h.shape[0]} entries, cell expects {p.n}")
    if x.shape[1] != h.shape[1]:
        raise ShapeError(f"batch sizes differ: x {x.shape[1]}, h {h.shape[1]}")

    pre_r = p.w_r @ x + p.u_r @ h + p.b_r[:, None]
    pre_u = p.w_u @ x + p.u_u @ h + p.b_u[:, None]
    r = sigmoid(pre_r)
    u = sigmoid(pre_u)
    if p.variant == "gru":
        pre_c = p.w_c @ x + p.u_c @ (r * h) + p.b_c[:, None]
        c = np.tanh(pre_c)
    elif p.variant == "ncgru":
        pre_c = p.w_c @ x + p.u_c @ (r * h)
        c = modrelu(pre_c, p.modrelu_b[:, None])
    else:
        raise ContractError(f"unknown variant {p.variant!r}")
    h_t = (1.0 - u) * h + u * c
    cache = StepCache(x_t=x, h_prev=h, pre_r=pre_r, pre_u=pre_u, pre_c=pre_c,
                      r_t=r, u_t=u, c_t=c, h_t=h_t, batched=bx, variant=p.variant)
    return (h_t if bx else h_t[:, 0]), cache


def gru_forward(p: CellParams, x_t: np.ndarray, h_prev: np.ndarray):
    if p.variant != "gru":
        raise ContractError(f"gru_forward called on variant {p.variant!r}")
    return cell_forward(p, x_t, h_prev)


def ncgru_forward(p: CellParams, x_t: np.ndarray, h_prev: np.ndarray):
    if p.variant != "ncgru":
        raise ContractError(f"ncgru_forward called on variant {p.variant!r}")
    return cell_forward(p, x_t, h_prev)


def _candidate_slope(p: CellParams, cache: StepCache) -> np.ndarray:
    """d c_t / d pre_c, entrywise."""
    if p.variant == "gru":
        return 1.0 - cache.c_t * cache.c_t
    return (np.abs(cache.pre_c) + p.modrelu_b[:, None] > 0.0).astype(np.float64)


def cell_backward(p: CellParams, cache: StepCache, grad_h: np.ndarray,
                  into: CellGrads | None = None) -> tuple[CellGrads, np.ndarray]:
    """Backpropagate dL/dh_t through one step.

    Returns (weight gradients, dL/dh_{t-1}). Bias gradients are summed over
    the batch. When into is given, gradients accumulate there (and it is
    also returned), which is what the sequence loop uses.
    """
    if p.variant != cache.variant:
        raise ContractError(
            f"cache from a {cache.variant!r} forward fed to {p.variant!r} backward")
    g_h, batched = _columns(grad_h, "grad_h")
    if g_h.shape != cache.h_t.shape:
        raise ShapeError(f"grad_h shape {g_h.shape} does not match h_t {cache.h_t.shape}")
    if batched != cache.batched:
        raise ShapeError("grad_h batchedness does not match the cached step")
    g = into if into is not None else CellGrads.zeros_like(p)

    h, r, u, c = cache.h_prev, cache.r_t, cache.u_t, cache.c_t
    g_u_gate = g_h * (c - h)
    g_c = g_h * u
    g_hprev = g_h * (1.0 - u)

    g_pre_c = g_c * _candidate_slope(p, cache)
    if p.variant == "ncgru":
        on = np.abs(cache.pre_c) + p.modrelu_b[:, None] > 0.0
        g.modrelu_b += np.sum(g_c * np.sign(cache.pre_c) * on, axis=1)
    else:
        g.b_c += np.sum(g_pre_c, axis=1)
    rh = r * h
    g.w_c += g_pre_c @ cache.x_t.T
    g.u_c += g_pre_c @ rh.T
    g_rh = p.u_c.T @ g_pre_c
    g_r_gate = g_rh * h
    g_hprev += g_rh * r

    g_pre_u = g_u_gate * u * (1.0 - u)
    g_pre_r = g_r_gate * r * (1.0 - r)
    g.w_u += g_pre_u @ cache.x_t.T
    g.u_u += g_pre_u @ h.T
    g.b_u += np.sum(g_pre_u, axis=1)
    g.w_r += g_pre_r @ cache.x_t.T
    g.u_r += g_pre_r @ h.T
    g.b_r += np.sum(g_pre_r, axis=1)
    g_hprev += p.u_u.T @ g_pre_u + p.u_r.T @ g_pre_r

    return g, (g_hprev if batched else g_hprev[:, 0])


def sequence_forward(p: CellParams, inputs) -> list[np.ndarray]:
    """Hidden states [h_1 .. h_T] from h_0 = 0, no caches kept."""
    xs = _normalize_inputs(inputs)
    h = _initial_state(p, xs[0])
    hs = []
    for x in xs:
        h, _ = cell_forward(p, x, h)
        hs.append(h)
    return hs


@dataclass
class BpttResult:
    loss: float
    grads: CellGrads
    hs: list


def sequence_bptt(p: CellParams, inputs, loss) -> BpttResult:
    """Full backpropagation through time from h_0 = 0.

    inputs is a sequence of per-step arrays (each (m,) or (m, B)) or an
    ndarray with time on axis 0. loss must provide
    loss_and_grads(hs) -> (scalar, per-step dL/dh list, None meaning zero),
    evaluated on the collected hidden states [h_1 .. h_T].
    """
    xs = _normalize_inputs(inputs)
    h = _initial_state(p, xs[0])
    caches = []
    hs = []
    for x in xs:
        h, cache = cell_forward(p, x, h)
        caches.append(cache)
        hs.append(h)

    loss_value, step_grads = loss.loss_and_grads(hs)
    if len(step_grads) != len(hs):
        raise ContractError(
            f"loss returned {len(step_grads)} step gradients for {len(hs)} steps")

    grads = CellGrads.zeros_like(p)
    g_h = None
    for t in range(len(xs) - 1, -1, -1):
        inject = step_grads[t]
        if inject is not None:
            g_h = inject if g_h is None else g_h + inject
        if g_h is None:
            continue
        grads, g_h = cell_backward(p, caches[t], g_h, into=grads)
    return BpttResult(loss=float(loss_value), grads=grads, hs=hs)


def _normalize_inputs(inputs) -> list[np.ndarray]:
    if isinstance(inputs, np.ndarray):
        xs = [inputs[t] for t in range(inputs.shape[0])]
    else:
        xs = [np.asarray(x, dtype=np.float64) for x in inputs]
    if not xs:
        raise ContractError("input sequence is empty")
    return xs


def _initial_state(p: CellParams, x0: np.ndarray) -> np.ndarray:
    if x0.ndim == 1:
        return np.zeros(p.n)
    return np.zeros((p.n, x0.shape[1]))


class FinalStateMse:
    """Reference loss for gradient tests: squared error between h_T and a
    fixed target, averaged over the batch."""

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)

    def loss_and_grads(self, hs):
        h_last = hs[-1]
        diff = h_last - self.target
        if diff.ndim == 1:
            batch = 1
        else:
            batch = diff.shape[1]
        loss = float(np.sum(diff * diff)) / batch
        grads = [None] * len(hs)
        grads[-1] = 2.0 * diff / batch
        return loss, grads


@dataclass
class JacobianResult:
    """matrix is d h_t / d h_{t-1}; near_kink is True when a modReLU
    pre-activation sits within 1e-6 of its kink, where the analytic
    subgradient and a finite-difference probe may disagree."""

    matrix: np.ndarray
    near_kink: bool


def jacobian_h(p: CellParams, cache: StepCache) -> JacobianResult:
    """Analytic one-step state Jacobian at a cached (unbatched) step.

    With Du = diag(u(1-u)) and Dr = diag(r(1-r)):

        J = diag(c - h) Du U_u + diag(1 - u)
            + diag(u) diag(phi') U_c (diag(h) Dr U_r + diag(r))
    """
    if p.variant != cache.variant:
        raise ContractError(
            f"cache from a {cache.variant!r} forward fed to {p.variant!r} jacobian")
    if cache.batched:
        raise ContractError("jacobian_h needs an unbatched cache (single example)")
    h = cache.h_prev[:, 0]
    r = cache.r_t[:, 0]
    u = cache.u_t[:, 0]
    c = cache.c_t[:, 0]
    du = u * (1.0 - u)
    dr = r * (1.0 - r)
    slope = _candidate_slope(p, cache)[:, 0]

    inner = (h * dr)[:, None] * p.u_r + np.diag(r)
    jac = ((c - h) * du)[:, None] * p.u_u
    jac += np.diag(1.0 - u)
    jac += (u * slope)[:, None] * (p.u_c @ inner)

    near = False
    if p.variant == "ncgru":
        margin = np.abs(np.abs(cache.pre_c[:, 0]) + p.modrelu_b)
        near = bool(np.min(margin) < _KINK_ATOL)
    return JacobianResult(matrix=jac, near_kink=near)
