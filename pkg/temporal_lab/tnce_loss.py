"""
TNCE Loss Module
Temporal noise-contrastive losses for both training stages, their analytic
gradients with respect to the trainable projections and a central-difference
reference
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NumericError, PreconditionError

logger = logging.getLogger(__name__)

STAGE_A = 'A'
STAGE_B = 'B'

ALPHA_NAMES = ('alpha_st', 'alpha_ct', 'alpha_so', 'alpha_co')


@dataclass
class LossCoefficients:
    """
    Weights of the negative terms

    alpha_st / alpha_ct weight the anchor's own / other time-inverted captions,
    alpha_so / alpha_co its own / other overlaid captions, beta the transposed
    (text-anchored) stage B loss and beta_A the transposed stage A loss.
    alpha_same / alpha_diff weight stage A cross-block candidates that do / do
    not share a class with the anchor. gamma scales every dot product.
    """

    alpha_st: float = 1.0
    alpha_ct: float = 1.0
    alpha_so: float = 1.0
    alpha_co: float = 1.0
    beta: float = 1.0
    beta_A: float = 1.0
    alpha_same: float = 1.0
    alpha_diff: float = 1.0
    gamma: float = 10.0
    appendix_a5_form: bool = False
    cross_blocks: bool = True

    def validate(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        for name, value in asdict(self).items():
            if isinstance(value, bool) or name == 'gamma':
                continue
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be a non-negative real, got {value}")
        off_grid = [n for n in ALPHA_NAMES if getattr(self, n) not in (0.0, 1.0)]
        if off_grid:
            logger.warning(f"Coefficients {off_grid} are outside {{0, 1}}")

    def with_alphas(self, alpha_st: float, alpha_ct: float, alpha_so: float, alpha_co: float,
                    beta: Optional[float] = None) -> 'LossCoefficients':
        values = asdict(self)
        values.update(alpha_st=alpha_st, alpha_ct=alpha_ct, alpha_so=alpha_so, alpha_co=alpha_co)
        if beta is not None:
            values['beta'] = beta
        return LossCoefficients(**values)


def similarity_matrix(z_c: np.ndarray, z_a: np.ndarray, gamma: float) -> np.ndarray:
    """C[i, j] = gamma * z_c[i] . z_a[j]"""
    z_c = np.atleast_2d(z_c)
    z_a = np.atleast_2d(z_a)
    if z_c.shape[1] != z_a.shape[1]:
        raise PreconditionError(f"Embedding dims differ: {z_c.shape[1]} vs {z_a.shape[1]}")
    return gamma * (z_c @ z_a.T)


def stage_b_weights(n: int, coeffs: LossCoefficients) -> np.ndarray:
    """
    Candidate weights for a stage B batch laid out [forward, reversed, overlaid]

    Row r holds the weights of every candidate in the denominator of anchor r;
    the anchor's positive is the same index in its own block.
    """
    if n < 1:
        raise PreconditionError("Stage B blocks need at least one row")
    eye = np.eye(n)
    ones = np.ones((n, n))

    def own_other(own: float, other: float) -> np.ndarray:
        return own * eye + other * (ones - eye)

    st_ct = own_other(coeffs.alpha_st, coeffs.alpha_ct)
    so_co = own_other(coeffs.alpha_so, coeffs.alpha_co)
    same_block = ones + (coeffs.alpha_so * eye if coeffs.appendix_a5_form else 0.0)
    overlay_forward = ones if coeffs.cross_blocks else np.zeros((n, n))

    return np.block([
        [same_block, st_ct, so_co],
        [st_ct, same_block, so_co],
        [overlay_forward, st_ct, ones],
    ])


def stage_a_weights(single_classes: Sequence[int], dual_pairs: Sequence[Tuple[int, int]],
                    coeffs: LossCoefficients) -> np.ndarray:
    """
    Candidate weights for a stage A batch laid out [singles, duals]

    A single/dual cross term weighs alpha_same when the single's class is one
    of the dual's classes and alpha_diff otherwise.
    """
    n_s, n_d = len(single_classes), len(dual_pairs)
    shares = np.array([[c in pair for pair in dual_pairs] for c in single_classes],
                      dtype=bool).reshape(n_s, n_d)
    cross = np.where(shares, coeffs.alpha_same, coeffs.alpha_diff)
    if not coeffs.cross_blocks:
        cross = np.zeros_like(cross, dtype=np.float64)
    return np.block([
        [np.ones((n_s, n_s)), cross],
        [cross.T, np.ones((n_d, n_d))],
    ])


def anchor_losses(logits: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """-l_pos + log sum_k w_k exp(l_k) for every row; positives on the diagonal"""
    positives = np.diagonal(logits)
    return logsumexp(logits, b=weights, axis=1) - positives


def _direction_loss_and_grads(x: np.ndarray, y: np.ndarray, weights: np.ndarray,
                              gamma: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Loss with anchors x against candidates y, and its gradients wrt x and y"""
    logits = gamma * (x @ y.T)
    lse = logsumexp(logits, b=weights, axis=1, keepdims=True)
    loss = float(np.sum(lse[:, 0] - np.diagonal(logits)))
    probs = weights * np.exp(logits - lse)
    g = probs - np.eye(logits.shape[0])
    return loss, gamma * (g @ y), gamma * (g.T @ x)


@dataclass(frozen=True)
class EmbeddingBatch:
    """
    Unit-norm audio and caption embeddings of one batch, rows in block order

    Stage B blocks are (forward, reversed, overlaid); stage A blocks are
    (singles, duals) and carry the class labels the alpha_same test needs.
    """

    stage: str
    z_a: np.ndarray
    z_c: np.ndarray
    block_sizes: Tuple[int, ...]
    single_classes: Tuple[int, ...] = ()
    dual_pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        _check_layout(self.stage, self.z_a.shape[0], self.z_c.shape[0], self.block_sizes,
                      self.single_classes, self.dual_pairs)
        if self.z_a.shape != self.z_c.shape:
            raise PreconditionError(f"Audio and caption embeddings differ in shape: "
                                    f"{self.z_a.shape} vs {self.z_c.shape}")
        for name, z in (('audio', self.z_a), ('caption', self.z_c)):
            if not np.all(np.isfinite(z)):
                raise NumericError(f"Non-finite {name} embeddings")
            if not np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-8):
                raise PreconditionError(f"{name} embeddings must be unit-norm")

    def weights(self, coeffs: LossCoefficients) -> np.ndarray:
        return _weights(self.stage, self.block_sizes, self.single_classes, self.dual_pairs, coeffs)


@dataclass(frozen=True)
class BaseBatch:
    """Frozen-base outputs of one batch, ready for the trainable projections"""

    stage: str
    h_a: np.ndarray
    h_c: np.ndarray
    block_sizes: Tuple[int, ...]
    single_classes: Tuple[int, ...] = ()
    dual_pairs: Tuple[Tuple[int, int], ...] = ()
    item_ids: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        _check_layout(self.stage, self.h_a.shape[0], self.h_c.shape[0], self.block_sizes,
                      self.single_classes, self.dual_pairs)

    def weights(self, coeffs: LossCoefficients) -> np.ndarray:
        return _weights(self.stage, self.block_sizes, self.single_classes, self.dual_pairs, coeffs)


def _check_layout(stage: str, rows_a: int, rows_c: int, block_sizes: Sequence[int],
                  single_classes: Sequence[int], dual_pairs: Sequence[Tuple[int, int]]):
    if stage == STAGE_B:
        if len(block_sizes) != 3 or len(set(block_sizes)) != 1 or block_sizes[0] < 1:
            raise PreconditionError(f"Stage B needs three equal non-empty blocks, got {block_sizes}")
    elif stage == STAGE_A:
        if len(block_sizes) != 2:
            raise PreconditionError(f"Stage A needs two blocks, got {block_sizes}")
        if (len(single_classes), len(dual_pairs)) != tuple(block_sizes):
            raise PreconditionError("Stage A labels do not match the block sizes")
    else:
        raise PreconditionError(f"Unknown stage '{stage}'")
    if rows_a != sum(block_sizes) or rows_c != sum(block_sizes):
        raise PreconditionError(f"Blocks {tuple(block_sizes)} do not cover {rows_a}/{rows_c} rows")


def _weights(stage, block_sizes, single_classes, dual_pairs, coeffs) -> np.ndarray:
    if stage == STAGE_B:
        return stage_b_weights(block_sizes[0], coeffs)
    return stage_a_weights(single_classes, dual_pairs, coeffs)


def _transpose_scale(batch: Union[EmbeddingBatch, BaseBatch], coeffs: LossCoefficients) -> float:
    return coeffs.beta if batch.stage == STAGE_B else coeffs.beta_A


def _anchor_row(z_a: np.ndarray, z_c: np.ndarray, anchor_row: int, weights: np.ndarray,
                gamma: float) -> float:
    if not (np.all(np.isfinite(z_a)) and np.all(np.isfinite(z_c))):
        raise NumericError("Non-finite embeddings")
    logits = gamma * (z_a[anchor_row] @ z_c.T)
    return float(logsumexp(logits, b=weights[anchor_row]) - logits[anchor_row])


def _stage_b_anchor(block: int, anchor_idx: int, z_a: np.ndarray, z_c: np.ndarray,
                    coeffs: LossCoefficients) -> float:
    if z_a.shape != z_c.shape or z_a.shape[0] % 3:
        raise PreconditionError("Stage B embeddings need 3n rows in both modalities")
    n = z_a.shape[0] // 3
    if not 0 <= anchor_idx < n:
        raise PreconditionError(f"Anchor {anchor_idx} outside a block of {n}")
    return _anchor_row(z_a, z_c, block * n + anchor_idx, stage_b_weights(n, coeffs), coeffs.gamma)


def tnce_forward(anchor_idx: int, z_a: np.ndarray, z_c: np.ndarray, coeffs: LossCoefficients) -> float:
    """
    TNCE of a forward-block anchor

    Denominator: all forward captions, the time-inverted captions (own weighted
    alpha_st, others alpha_ct) and the overlaid captions (own alpha_so, others
    alpha_co).
    """
    return _stage_b_anchor(0, anchor_idx, z_a, z_c, coeffs)


def tnce_reversed(anchor_idx: int, z_a: np.ndarray, z_c: np.ndarray, coeffs: LossCoefficients) -> float:
    """TNCE of a reversed-block anchor: the forward anchor's loss with the two blocks swapped"""
    return _stage_b_anchor(1, anchor_idx, z_a, z_c, coeffs)


def tnce_overlay(anchor_idx: int, z_a: np.ndarray, z_c: np.ndarray, coeffs: LossCoefficients) -> float:
    """
    TNCE of an overlaid-block anchor

    Denominator: all overlaid captions, every forward caption with unit weight
    (dropped when cross_blocks is off) and the reversed captions weighted
    alpha_st / alpha_ct.
    """
    return _stage_b_anchor(2, anchor_idx, z_a, z_c, coeffs)


def tnce_single(anchor_idx: int, z_a: np.ndarray, z_c: np.ndarray,
                single_classes: Sequence[int], dual_pairs: Sequence[Tuple[int, int]],
                coeffs: LossCoefficients) -> float:
    """Stage A TNCE of a single-clip anchor"""
    if not 0 <= anchor_idx < len(single_classes):
        raise PreconditionError(f"Anchor {anchor_idx} outside the singles block")
    weights = stage_a_weights(single_classes, dual_pairs, coeffs)
    return _anchor_row(z_a, z_c, anchor_idx, weights, coeffs.gamma)


def tnce_dual(anchor_idx: int, z_a: np.ndarray, z_c: np.ndarray,
              single_classes: Sequence[int], dual_pairs: Sequence[Tuple[int, int]],
              coeffs: LossCoefficients) -> float:
    """Stage A TNCE of a dual-clip anchor"""
    if not 0 <= anchor_idx < len(dual_pairs):
        raise PreconditionError(f"Anchor {anchor_idx} outside the duals block")
    weights = stage_a_weights(single_classes, dual_pairs, coeffs)
    return _anchor_row(z_a, z_c, len(single_classes) + anchor_idx, weights, coeffs.gamma)


def direction_loss(z_anchor: np.ndarray, z_candidate: np.ndarray, weights: np.ndarray,
                   gamma: float) -> float:
    """Sum of TNCE terms over every anchor row"""
    return float(np.sum(anchor_losses(gamma * (z_anchor @ z_candidate.T), weights)))


def batch_loss(batch: EmbeddingBatch, coeffs: LossCoefficients) -> Tuple[float, float, float]:
    """
    Returns:
        (total, audio-anchored part, text-anchored part); total adds the
        text-anchored part scaled by beta (stage B) or beta_A (stage A)
    """
    weights = batch.weights(coeffs)
    audio_anchored = direction_loss(batch.z_a, batch.z_c, weights, coeffs.gamma)
    text_anchored = direction_loss(batch.z_c, batch.z_a, weights, coeffs.gamma)
    total = audio_anchored + _transpose_scale(batch, coeffs) * text_anchored
    if not np.isfinite(total):
        raise NumericError("Loss is not finite")
    return total, audio_anchored, text_anchored


def loss_stage_b(batch: EmbeddingBatch, coeffs: LossCoefficients) -> float:
    if batch.stage != STAGE_B:
        raise PreconditionError("loss_stage_b needs a stage B batch")
    return batch_loss(batch, coeffs)[0]


def loss_stage_a(batch: EmbeddingBatch, coeffs: LossCoefficients) -> float:
    if batch.stage != STAGE_A:
        raise PreconditionError("loss_stage_a needs a stage A batch")
    return batch_loss(batch, coeffs)[0]


TrainableLike = Union[Mapping[str, np.ndarray], object]


def _trainable(params: TrainableLike) -> Mapping[str, np.ndarray]:
    return getattr(params, 'trainable', params)


def _normalize(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        raise NumericError("Zero-norm or non-finite projection output")
    return u / norms, norms


def embed_batch(base: BaseBatch, params: TrainableLike) -> EmbeddingBatch:
    """Apply the trainable projections and normalise"""
    w = _trainable(params)
    z_a, _ = _normalize(base.h_a @ w['phi_w'] + w['phi_b'])
    z_c, _ = _normalize(base.h_c @ w['theta_w'] + w['theta_b'])
    return EmbeddingBatch(base.stage, z_a, z_c, base.block_sizes, base.single_classes, base.dual_pairs)


def loss_and_grad(base: BaseBatch, params: TrainableLike,
                  coeffs: LossCoefficients) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Batch loss and its analytic gradient over phi_w, phi_b, theta_w, theta_b

    Args:
        base: Frozen-base outputs of the batch
        params: EncoderParams or a mapping holding the trainable arrays
        coeffs: Loss coefficients

    Returns:
        (loss, gradients keyed like the trainable arrays)
    """
    w = _trainable(params)
    u_a = base.h_a @ w['phi_w'] + w['phi_b']
    u_c = base.h_c @ w['theta_w'] + w['theta_b']
    z_a, norm_a = _normalize(u_a)
    z_c, norm_c = _normalize(u_c)
    weights = base.weights(coeffs)
    scale = _transpose_scale(base, coeffs)

    loss_ac, dz_a, dz_c = _direction_loss_and_grads(z_a, z_c, weights, coeffs.gamma)
    loss_ca, dz_c2, dz_a2 = _direction_loss_and_grads(z_c, z_a, weights, coeffs.gamma)
    loss = loss_ac + scale * loss_ca
    dz_a = dz_a + scale * dz_a2
    dz_c = dz_c + scale * dz_c2

    du_a = (dz_a - z_a * np.sum(z_a * dz_a, axis=1, keepdims=True)) / norm_a
    du_c = (dz_c - z_c * np.sum(z_c * dz_c, axis=1, keepdims=True)) / norm_c
    grads = {
        'phi_w': base.h_a.T @ du_a,
        'phi_b': du_a.sum(axis=0),
        'theta_w': base.h_c.T @ du_c,
        'theta_b': du_c.sum(axis=0),
    }
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NumericError("Non-finite loss or gradient")
    return float(loss), grads


def grad(base: BaseBatch, params: TrainableLike, coeffs: LossCoefficients) -> Dict[str, np.ndarray]:
    return loss_and_grad(base, params, coeffs)[1]


def batch_value(base: BaseBatch, params: TrainableLike, coeffs: LossCoefficients) -> float:
    return batch_loss(embed_batch(base, params), coeffs)[0]


Coordinate = Tuple[str, Tuple[int, ...]]


def finite_diff_grad(base: BaseBatch, params: TrainableLike, coeffs: LossCoefficients,
                     h: float = 1e-6,
                     coords: Optional[Sequence[Coordinate]] = None) -> Dict[str, np.ndarray]:
    """
    Central differences (L(w + h) - L(w - h)) / 2h

    Args:
        base: Frozen-base outputs of the batch
        params: EncoderParams or a mapping holding the trainable arrays
        coeffs: Loss coefficients
        h: Step size
        coords: (name, index) coordinates to probe; every coordinate when omitted

    Returns:
        Arrays shaped like the trainable ones; unprobed entries are NaN
    """
    if h <= 0:
        raise PreconditionError(f"Step size must be positive, got {h}")
    work = {k: np.array(v, dtype=np.float64) for k, v in _trainable(params).items()}
    estimate = {k: np.full_like(v, np.nan) for k, v in work.items()}
    if coords is None:
        coords = [(name, idx) for name, array in work.items() for idx in np.ndindex(array.shape)]
    for name, idx in coords:
        original = work[name][idx]
        work[name][idx] = original + h
        upper = batch_value(base, work, coeffs)
        work[name][idx] = original - h
        lower = batch_value(base, work, coeffs)
        work[name][idx] = original
        estimate[name][idx] = (upper - lower) / (2.0 * h)
    return estimate


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-2) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor) elementwise"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_base_batch(stage: str, n: int, base_dim: int, seed: int,
                      num_classes: int = 6) -> BaseBatch:
    """Seeded synthetic frozen-base outputs for gradient checks"""
    rng = np.random.default_rng(seed)
    rows = 3 * n if stage == STAGE_B else 2 * n
    h_a = np.tanh(rng.standard_normal((rows, base_dim)))
    h_c = np.tanh(rng.standard_normal((rows, base_dim)))
    if stage == STAGE_B:
        return BaseBatch(STAGE_B, h_a, h_c, (n, n, n))
    singles = tuple(int(c) for c in rng.integers(num_classes, size=n))
    duals = []
    for c in singles:
        other = int(rng.integers(num_classes - 1))
        duals.append((c, other if other < c else other + 1))
    return BaseBatch(STAGE_A, h_a, h_c, (n, n), singles, tuple(duals))


def random_trainable(base_dim: int, embed_dim: int, seed: int) -> Dict[str, np.ndarray]:
    """Seeded projection weights shaped like the encoder's trainable block"""
    rng = np.random.default_rng(seed)
    limit = np.sqrt(3.0 / base_dim)
    return {
        'phi_w': rng.uniform(-limit, limit, (base_dim, embed_dim)),
        'phi_b': rng.uniform(-0.1, 0.1, embed_dim),
        'theta_w': rng.uniform(-limit, limit, (base_dim, embed_dim)),
        'theta_b': rng.uniform(-0.1, 0.1, embed_dim),
    }


def sample_coordinates(trainable: Mapping[str, np.ndarray], count: int, seed: int) -> List[Coordinate]:
    """count distinct (name, index) coordinates drawn uniformly over all trainable entries"""
    flat = [(name, idx) for name in sorted(trainable) for idx in np.ndindex(trainable[name].shape)]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(flat), size=min(count, len(flat)), replace=False)
    return [flat[k] for k in sorted(picks)]


@dataclass
class GradCheckResult:
    """Largest analytic vs central-difference disagreement of one configuration"""

    stage: str
    coefficients: Dict[str, Union[float, bool]]
    max_relative_error: float
    worst_coordinate: Coordinate
    coordinates: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_relative_error <= self.tolerance)

    def to_dict(self) -> Dict:
        name, idx = self.worst_coordinate
        return {
            'stage': self.stage,
            'coefficients': self.coefficients,
            'max_relative_error': self.max_relative_error,
            'worst_coordinate': [name, list(idx)],
            'coordinates': self.coordinates,
            'tolerance': self.tolerance,
            'passed': self.passed,
        }


def gradient_check(stage: str, coeffs: LossCoefficients, seed: int = 0, n: int = 4,
                   base_dim: int = 16, embed_dim: int = 8, n_coords: int = 20,
                   h: float = 1e-6, tolerance: float = 1e-5, floor: float = 1e-2,
                   corrupt: float = 0.0) -> GradCheckResult:
    """
    Compare grad() with finite_diff_grad() on a seeded synthetic batch

    Args:
        stage: 'A' or 'B'
        coeffs: Loss coefficients under test
        seed: Seed of the batch, the weights and the probed coordinates
        n: Rows per block
        base_dim: Width of the synthetic frozen-base outputs
        embed_dim: Width of the joint embedding
        n_coords: Coordinates probed with central differences
        h: Finite-difference step
        tolerance: Largest accepted relative error
        floor: Denominator floor of the relative error
        corrupt: Relative and absolute perturbation of every probed analytic
            entry; values well above tolerance must fail

    Returns:
        GradCheckResult of the worst probed coordinate
    """
    base = random_base_batch(stage, n, base_dim, seed)
    trainable = random_trainable(base_dim, embed_dim, seed + 1)
    coords = sample_coordinates(trainable, n_coords, seed + 2)
    analytic = grad(base, trainable, coeffs)
    numeric = finite_diff_grad(base, trainable, coeffs, h=h, coords=coords)

    errors = []
    for name, idx in coords:
        value = analytic[name][idx] * (1.0 + corrupt) + corrupt
        errors.append(float(relative_error(value, numeric[name][idx], floor)))
    worst = int(np.argmax(errors))
    result = GradCheckResult(
        stage=stage,
        coefficients=asdict(coeffs),
        max_relative_error=errors[worst],
        worst_coordinate=coords[worst],
        coordinates=len(coords),
        tolerance=tolerance,
    )
    logger.debug(f"Gradient check stage {stage}: max relative error {result.max_relative_error:.3e}")
    return result
