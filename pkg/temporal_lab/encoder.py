"""
Encoder Module
Band-energy audio features, toy audio and text encoders with a frozen base and
trainable projections, parameter initialisation and checkpoints
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .audio_synth import Waveform, default_f_max, log_band_centers
from .caption_gen import Vocabulary, tokenize
from .errors import ConfigError, DataIOError, NumericError, PreconditionError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
POOLING_MODES = ('mean', 'mean+position')

FROZEN_NAMES = ('band_mean', 'band_std',
                'audio_w1', 'audio_b1', 'audio_w2', 'audio_b2',
                'token_table', 'text_w1', 'text_b1', 'text_w2', 'text_b2')
TRAINABLE_NAMES = ('phi_w', 'phi_b', 'theta_w', 'theta_b')


@dataclass
class FeatureConfig:
    """STFT band-energy front end"""

    n_fft: int = 512
    hop_length: int = 256
    n_bands: int = 32
    f_min: float = 200.0
    f_max: Optional[float] = None
    energy_floor: float = 1e-4
    pooling: str = 'mean+position'

    def validate(self):
        if self.n_fft < 16 or not 0 < self.hop_length <= self.n_fft:
            raise ConfigError("Need n_fft >= 16 and 0 < hop_length <= n_fft")
        if self.n_bands < 3:
            raise ConfigError("n_bands must be >= 3")
        if self.f_min <= 0 or (self.f_max is not None and self.f_max <= self.f_min):
            raise ConfigError("Band edges must satisfy 0 < f_min < f_max")
        if self.energy_floor <= 0:
            raise ConfigError("energy_floor must be positive")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}")


@dataclass
class EncoderConfig:
    """Layer widths; only the final projections to embed_dim are trainable"""

    hidden_dim: int = 256
    base_dim: int = 128
    embed_dim: int = 32
    token_dim: int = 32

    def validate(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"encoder.{name} must be a positive integer, got {value}")


@dataclass(frozen=True)
class FeatureMatrix:
    """F x T log band energies"""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if self.values.ndim != 2:
            raise PreconditionError(f"Features must be F x T, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("Features contain non-finite values")

    @property
    def n_bands(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


_FILTERBANK_CACHE: Dict[Tuple, np.ndarray] = {}


def band_filterbank(sample_rate: int, cfg: FeatureConfig) -> np.ndarray:
    """
    Triangular filters with unit peak on log-spaced centres

    Returns:
        Array (n_bands, n_fft // 2 + 1)
    """
    f_max = cfg.f_max if cfg.f_max is not None else default_f_max(sample_rate)
    key = (sample_rate, cfg.n_fft, cfg.n_bands, cfg.f_min, f_max)
    if key in _FILTERBANK_CACHE:
        return _FILTERBANK_CACHE[key]

    centers = log_band_centers(cfg.n_bands, cfg.f_min, f_max)
    ratio = centers[1] / centers[0]
    edges = np.concatenate([[centers[0] / ratio], centers, [centers[-1] * ratio]])
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / sample_rate)

    bank = np.zeros((cfg.n_bands, freqs.size))
    for k in range(cfg.n_bands):
        lower, center, upper = edges[k], edges[k + 1], edges[k + 2]
        rising = (freqs - lower) / (center - lower)
        falling = (upper - freqs) / (upper - center)
        bank[k] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not bank[k].any():
            bank[k, np.argmin(np.abs(freqs - center))] = 1.0
    bank.setflags(write=False)
    _FILTERBANK_CACHE[key] = bank
    return bank


def extract_features(w: Waveform, cfg: FeatureConfig) -> FeatureMatrix:
    """
    Short-time band energies of a waveform

    Args:
        w: Input waveform
        cfg: Front-end configuration

    Returns:
        FeatureMatrix of log1p(E / energy_floor), zero for silence
    """
    if len(w) < cfg.n_fft:
        raise PreconditionError(f"Clip of {len(w)} samples is shorter than one {cfg.n_fft}-sample frame")
    _, _, spectrum = signal.stft(
        w.samples, fs=w.sample_rate, window='hann', nperseg=cfg.n_fft,
        noverlap=cfg.n_fft - cfg.hop_length, boundary=None, padded=False,
    )
    power = np.abs(spectrum) ** 2
    energies = band_filterbank(w.sample_rate, cfg) @ power
    return FeatureMatrix(values=np.log1p(energies / cfg.energy_floor))


def _position_weights(length: int) -> np.ndarray:
    # centred on zero so the moment carries order only
    return (np.arange(length) + 0.5) / length - 0.5


def pool_sequence(x: np.ndarray, mode: str) -> np.ndarray:
    """
    Pool a (length, dim) sequence into a fixed vector

    'mean' gives the plain mean; 'mean+position' appends the position-weighted
    moment sum_t w_t x_t / length, which differs between a sequence and its
    reordering.
    """
    length = x.shape[0]
    mean = x.mean(axis=0)
    if mode == 'mean':
        return mean
    moment = _position_weights(length) @ x / length
    return np.concatenate([mean, moment])


def _pooled_dim(width: int, mode: str) -> int:
    return width if mode == 'mean' else 2 * width


@dataclass(frozen=True)
class EncoderParams:
    """
    Frozen base weights (read-only arrays behind a read-only mapping) and the
    trainable projections phi (audio) and theta (text)
    """

    frozen: Mapping[str, np.ndarray]
    trainable: Dict[str, np.ndarray]
    feature_cfg: FeatureConfig
    encoder_cfg: EncoderConfig
    seed: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        locked = {}
        for name in FROZEN_NAMES:
            if name not in self.frozen:
                raise PreconditionError(f"Missing frozen parameter '{name}'")
            array = np.asarray(self.frozen[name], dtype=np.float64)
            array.setflags(write=False)
            locked[name] = array
        object.__setattr__(self, 'frozen', MappingProxyType(locked))
        for name in TRAINABLE_NAMES:
            if name not in self.trainable:
                raise PreconditionError(f"Missing trainable parameter '{name}'")
        for name, array in list(self.frozen.items()) + list(self.trainable.items()):
            if not np.all(np.isfinite(array)):
                raise NumericError(f"Parameter '{name}' has non-finite entries")

    def copy(self) -> 'EncoderParams':
        """Shares the frozen arrays, copies the trainable ones"""
        return EncoderParams(
            frozen=self.frozen,
            trainable={k: v.copy() for k, v in self.trainable.items()},
            feature_cfg=self.feature_cfg,
            encoder_cfg=self.encoder_cfg,
            seed=self.seed,
            meta=dict(self.meta),
        )

    def counts(self) -> Dict[str, float]:
        frozen = int(sum(a.size for a in self.frozen.values()))
        trainable = int(sum(a.size for a in self.trainable.values()))
        return {
            'frozen': frozen,
            'trainable': trainable,
            'total': frozen + trainable,
            'trainable_fraction': trainable / (frozen + trainable),
        }

    def checkpoint_id(self) -> str:
        digest = hashlib.sha256()
        for name in FROZEN_NAMES:
            digest.update(np.ascontiguousarray(self.frozen[name]).tobytes())
        for name in TRAINABLE_NAMES:
            digest.update(np.ascontiguousarray(self.trainable[name]).tobytes())
        return digest.hexdigest()[:16]


def _uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_params(seed: int, vocab_size: int,
                feature_cfg: Optional[FeatureConfig] = None,
                encoder_cfg: Optional[EncoderConfig] = None,
                calibration: Optional[Sequence[FeatureMatrix]] = None) -> EncoderParams:
    """
    Draw encoder parameters

    Args:
        seed: Initialisation seed
        vocab_size: Rows of the token table
        feature_cfg: Front-end configuration
        encoder_cfg: Layer widths
        calibration: Feature matrices of training clips; their per-band frame
            mean and std become the frozen normalisation (identity if omitted)

    Returns:
        EncoderParams with locked frozen weights
    """
    feature_cfg = feature_cfg or FeatureConfig()
    encoder_cfg = encoder_cfg or EncoderConfig()
    feature_cfg.validate()
    encoder_cfg.validate()
    if vocab_size < 1:
        raise ConfigError(f"vocab_size must be positive, got {vocab_size}")

    rng = np.random.default_rng(seed)
    bands = feature_cfg.n_bands
    audio_in = _pooled_dim(bands, feature_cfg.pooling)
    text_in = _pooled_dim(encoder_cfg.token_dim, feature_cfg.pooling)
    hidden, base, embed = encoder_cfg.hidden_dim, encoder_cfg.base_dim, encoder_cfg.embed_dim

    if calibration:
        frames = np.concatenate([fm.values for fm in calibration], axis=1)
        if frames.shape[0] != bands:
            raise PreconditionError("Calibration features have the wrong number of bands")
        band_mean = frames.mean(axis=1)
        band_std = np.maximum(frames.std(axis=1), 1e-6)
    else:
        band_mean = np.zeros(bands)
        band_std = np.ones(bands)

    frozen = {
        'band_mean': band_mean,
        'band_std': band_std,
        'audio_w1': _uniform(rng, audio_in, (audio_in, hidden)),
        'audio_b1': _uniform(rng, audio_in, (hidden,)) * 0.1,
        'audio_w2': _uniform(rng, hidden, (hidden, base)),
        'audio_b2': _uniform(rng, hidden, (base,)) * 0.1,
        'token_table': rng.standard_normal((vocab_size, encoder_cfg.token_dim)),
        'text_w1': _uniform(rng, text_in, (text_in, hidden)),
        'text_b1': _uniform(rng, text_in, (hidden,)) * 0.1,
        'text_w2': _uniform(rng, hidden, (hidden, base)),
        'text_b2': _uniform(rng, hidden, (base,)) * 0.1,
    }
    trainable = {
        'phi_w': _uniform(rng, base, (base, embed)),
        'phi_b': np.zeros(embed),
        'theta_w': _uniform(rng, base, (base, embed)),
        'theta_b': np.zeros(embed),
    }
    params = EncoderParams(frozen=frozen, trainable=trainable, feature_cfg=feature_cfg,
                           encoder_cfg=encoder_cfg, seed=seed)
    counts = params.counts()
    logger.debug(f"Initialised encoder: {counts['trainable']} of {counts['total']} parameters trainable "
                 f"({counts['trainable_fraction']:.2%})")
    return params


def audio_base(x: FeatureMatrix, params: EncoderParams) -> np.ndarray:
    """Frozen part of the audio encoder: normalise, pool, two tanh layers"""
    f = params.frozen
    if x.n_bands != f['band_mean'].size:
        raise PreconditionError(f"Expected {f['band_mean'].size} bands, got {x.n_bands}")
    normalized = (x.values - f['band_mean'][:, None]) / f['band_std'][:, None]
    pooled = pool_sequence(normalized.T, params.feature_cfg.pooling)
    hidden = np.tanh(pooled @ f['audio_w1'] + f['audio_b1'])
    return np.tanh(hidden @ f['audio_w2'] + f['audio_b2'])


def text_base(tokens: Sequence[int], params: EncoderParams) -> np.ndarray:
    """Frozen part of the text encoder: token lookup, pool, two tanh layers"""
    if len(tokens) == 0:
        raise PreconditionError("Cannot encode an empty token sequence")
    f = params.frozen
    table = f['token_table']
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise PreconditionError("Token id outside the vocabulary")
    pooled = pool_sequence(table[ids], params.feature_cfg.pooling)
    hidden = np.tanh(pooled @ f['text_w1'] + f['text_b1'])
    return np.tanh(hidden @ f['text_w2'] + f['text_b2'])


def l2_normalize(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise L2 normalisation

    Returns:
        (unit rows, row norms); a zero or non-finite row raises NumericError
    """
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        raise NumericError("Cannot normalise a zero-norm or non-finite embedding")
    return u / norms, norms


def project_audio(h: np.ndarray, params: EncoderParams) -> np.ndarray:
    return h @ params.trainable['phi_w'] + params.trainable['phi_b']


def project_text(h: np.ndarray, params: EncoderParams) -> np.ndarray:
    return h @ params.trainable['theta_w'] + params.trainable['theta_b']


def encode_audio(x: FeatureMatrix, params: EncoderParams) -> np.ndarray:
    """Unit-norm audio embedding z_a"""
    return l2_normalize(project_audio(audio_base(x, params), params))[0]


def encode_text(tokens: Sequence[int], params: EncoderParams) -> np.ndarray:
    """Unit-norm text embedding z_c"""
    return l2_normalize(project_text(text_base(tokens, params), params))[0]


def save_checkpoint(path: str, params: EncoderParams, meta: Optional[Dict[str, Any]] = None):
    """
    Write params as .npz with a JSON metadata entry

    Args:
        path: Destination file
        params: Parameters to save
        meta: Extra metadata (vocabulary, class names, fingerprint, ...)
    """
    header = {
        'format_version': CHECKPOINT_FORMAT,
        'seed': params.seed,
        'feature_cfg': asdict(params.feature_cfg),
        'encoder_cfg': asdict(params.encoder_cfg),
        'frozen': list(FROZEN_NAMES),
        'trainable': list(TRAINABLE_NAMES),
        'checkpoint_id': params.checkpoint_id(),
        'counts': params.counts(),
    }
    header.update(params.meta)
    header.update(meta or {})
    arrays = {f"frozen__{k}": v for k, v in params.frozen.items()}
    arrays.update({f"trainable__{k}": v for k, v in params.trainable.items()})
    arrays['__meta__'] = np.array(json.dumps(header, sort_keys=True))
    try:
        with open(path, 'wb') as f:
            np.savez(f, **arrays)
    except OSError as e:
        raise DataIOError(f"Failed to write checkpoint {path}: {e}") from e


def load_checkpoint(path: str) -> EncoderParams:
    """Read a checkpoint written by save_checkpoint; arrays reload bit-exactly"""
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data['__meta__']))
            frozen = {k: data[f"frozen__{k}"] for k in FROZEN_NAMES}
            trainable = {k: data[f"trainable__{k}"].copy() for k in TRAINABLE_NAMES}
    except (OSError, KeyError, ValueError) as e:
        raise DataIOError(f"Failed to read checkpoint {path}: {e}") from e
    if header.get('format_version') != CHECKPOINT_FORMAT:
        raise DataIOError(f"Unsupported checkpoint format {header.get('format_version')}")
    known = {'format_version', 'seed', 'feature_cfg', 'encoder_cfg', 'frozen', 'trainable',
             'checkpoint_id', 'counts'}
    return EncoderParams(
        frozen=frozen,
        trainable=trainable,
        feature_cfg=FeatureConfig(**header['feature_cfg']),
        encoder_cfg=EncoderConfig(**header['encoder_cfg']),
        seed=header['seed'],
        meta={k: v for k, v in header.items() if k not in known},
    )


class EncoderModel:
    """Zero-shot model over encoder params and a vocabulary"""

    def __init__(self, params: EncoderParams, vocab: Vocabulary, gamma: float = 10.0):
        self.params = params
        self.vocab = vocab
        self.gamma = gamma
        self._text_cache: Dict[str, np.ndarray] = {}

    @classmethod
    def from_checkpoint(cls, path: str, gamma: Optional[float] = None) -> 'EncoderModel':
        params = load_checkpoint(path)
        if 'vocabulary' not in params.meta:
            raise DataIOError(f"Checkpoint {path} carries no vocabulary")
        vocab = Vocabulary(token_to_id=dict(params.meta['vocabulary']))
        return cls(params, vocab, gamma if gamma is not None else params.meta.get('gamma', 10.0))

    @property
    def class_names(self) -> List[str]:
        return list(self.params.meta.get('class_names', []))

    def embed_audio(self, w: Waveform) -> np.ndarray:
        return encode_audio(extract_features(w, self.params.feature_cfg), self.params)

    def embed_text(self, text: str) -> np.ndarray:
        if text not in self._text_cache:
            self._text_cache[text] = encode_text(tokenize(text, self.vocab), self.params)
        return self._text_cache[text]
