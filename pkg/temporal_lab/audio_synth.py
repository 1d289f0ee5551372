"""
Audio Synthesis Module
Deterministic synthetic sound-event corpus, the concatenation / overlay
composition operators and 16-bit mono WAV I/O
"""

import itertools
import json
import logging
import math
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import soundfile as sf

from .errors import ConfigError, DataIOError, PreconditionError, WavFormatError

logger = logging.getLogger(__name__)

SINGLE = 'single'
CONCAT = 'concat'
OVERLAY = 'overlay'
RELATIONS = (SINGLE, CONCAT, OVERLAY)

PEAK_AMPLITUDE = 0.9
PCM16_SCALE = 32767.0
UNKNOWN_CLASS = -1

# ESC-50 categories, one token each so every caption stays parseable
ESC50_CLASS_NAMES = [
    'dog', 'rooster', 'pig', 'cow', 'frog', 'cat', 'hen', 'insects', 'sheep', 'crow',
    'rain', 'sea_waves', 'crackling_fire', 'crickets', 'chirping_birds', 'water_drops',
    'wind', 'pouring_water', 'toilet_flush', 'thunderstorm',
    'crying_baby', 'sneezing', 'clapping', 'breathing', 'coughing', 'footsteps',
    'laughing', 'brushing_teeth', 'snoring', 'drinking_sipping',
    'door_wood_knock', 'mouse_click', 'keyboard_typing', 'door_wood_creaks', 'can_opening',
    'washing_machine', 'vacuum_cleaner', 'clock_alarm', 'clock_tick', 'glass_breaking',
    'helicopter', 'chainsaw', 'siren', 'car_horn', 'engine', 'train', 'church_bells',
    'airplane', 'fireworks', 'hand_saw',
]


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono PCM clip in [-1, 1] with its class provenance"""

    samples: np.ndarray
    sample_rate: int
    class_ids: Tuple[int, ...]
    relation: str = SINGLE

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise PreconditionError(f"Waveform samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise PreconditionError("Waveform samples must be finite")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise PreconditionError("Waveform amplitudes must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise PreconditionError(f"Sample rate must be positive, got {self.sample_rate}")
        if self.relation not in RELATIONS:
            raise PreconditionError(f"Unknown relation '{self.relation}'")
        class_ids = tuple(int(c) for c in self.class_ids)
        expected = 1 if self.relation == SINGLE else 2
        if len(class_ids) != expected:
            raise PreconditionError(
                f"A {self.relation} waveform carries {expected} class ids, got {len(class_ids)}"
            )
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'class_ids', class_ids)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if self.samples.size else 0.0


@dataclass
class CorpusSpec:
    """Shape and seed of the synthetic corpus"""

    num_classes: int = 10
    clip_duration: float = 1.0
    sample_rate: int = 8000
    seed: int = 0
    clips_per_class: int = 4
    heldout_clips: int = 1
    class_names: Optional[List[str]] = None
    signature_bands: int = 32
    f_min: float = 200.0

    @property
    def samples_per_clip(self) -> int:
        return int(round(self.sample_rate * self.clip_duration))

    def resolved_class_names(self) -> List[str]:
        if self.class_names:
            return list(self.class_names[:self.num_classes])
        names = list(ESC50_CLASS_NAMES[:self.num_classes])
        names.extend(f"class_{k}" for k in range(len(names), self.num_classes))
        return names

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.clips_per_class < 2:
            raise ConfigError("clips_per_class must be >= 2 so training and held-out clips differ")
        if not 1 <= self.heldout_clips < self.clips_per_class:
            raise ConfigError("heldout_clips must be in [1, clips_per_class)")
        if self.sample_rate <= 0 or self.clip_duration <= 0:
            raise ConfigError("sample_rate and clip_duration must be positive")
        if self.signature_bands < 3:
            raise ConfigError("signature_bands must be >= 3")
        if self.num_classes > math.comb(self.signature_bands, 3):
            raise ConfigError(
                f"{self.num_classes} classes exceed the {math.comb(self.signature_bands, 3)} "
                f"distinct signatures of {self.signature_bands} bands"
            )
        if not 0 < self.f_min < self.sample_rate / 2:
            raise ConfigError("f_min must lie below the Nyquist frequency")
        if self.class_names is not None:
            if len(self.class_names) < self.num_classes:
                raise ConfigError("class_names lists fewer names than num_classes")
            names = self.class_names[:self.num_classes]
            if len(set(names)) != len(names):
                raise ConfigError("class_names must be unique")
            if any(not name or name != name.lower() or len(name.split()) != 1 for name in names):
                raise ConfigError("class names must be single lowercase tokens")


@dataclass(frozen=True)
class ClassSignature:
    frequencies: Tuple[float, float, float]
    weights: Tuple[float, float, float]
    noise_center: float
    noise_bandwidth: float
    decay: float
    am_rate: float


def log_band_centers(n_bands: int, f_min: float, f_max: float) -> np.ndarray:
    """Geometrically spaced band centres from f_min to f_max inclusive"""
    return f_min * (f_max / f_min) ** (np.arange(n_bands) / (n_bands - 1))


def default_f_max(sample_rate: int) -> float:
    return 0.95 * sample_rate / 2


def class_signature(class_id: int, spec: CorpusSpec) -> ClassSignature:
    """
    Spectral signature of a class: three sinusoids on band centres (a distinct
    3-subset of bands per class), a narrowband noise component and an envelope

    Args:
        class_id: Class index in [0, K)
        spec: Corpus specification

    Returns:
        ClassSignature for the class
    """
    if not 0 <= class_id < spec.num_classes:
        raise PreconditionError(f"class_id {class_id} out of range [0, {spec.num_classes})")

    centers = log_band_centers(spec.signature_bands, spec.f_min, default_f_max(spec.sample_rate))
    subsets = _band_subsets(spec.signature_bands, spec.seed)
    bands = subsets[class_id]

    rng = np.random.default_rng([spec.seed, class_id, 1])
    weights = tuple(float(w) for w in rng.permutation([1.0, 0.7, 0.5]))
    noise_band = (class_id * 7 + 3) % spec.signature_bands
    return ClassSignature(
        frequencies=tuple(float(centers[b]) for b in bands),
        weights=weights,
        noise_center=float(centers[noise_band]),
        noise_bandwidth=float(0.15 * centers[noise_band]),
        decay=float(rng.uniform(0.2, 2.0)),
        am_rate=float(rng.uniform(1.0, 6.0)),
    )


_SUBSET_CACHE: Dict[Tuple[int, int], List[Tuple[int, ...]]] = {}


def _band_subsets(n_bands: int, seed: int) -> List[Tuple[int, ...]]:
    key = (n_bands, seed)
    if key not in _SUBSET_CACHE:
        combos = list(itertools.combinations(range(n_bands), 3))
        order = np.random.default_rng([seed, 0x5151]).permutation(len(combos))
        _SUBSET_CACHE[key] = [combos[i] for i in order]
    return _SUBSET_CACHE[key]


def synth_clip(class_id: int, instance_seed: int, spec: CorpusSpec) -> Waveform:
    """
    Synthesise one clip of a class

    Args:
        class_id: Class index in [0, K)
        instance_seed: Selects the instance (phases, jitter, noise, gain)
        spec: Corpus specification

    Returns:
        Single Waveform with peak amplitude <= 0.9, bit-identical for equal inputs
    """
    signature = class_signature(class_id, spec)
    rng = np.random.default_rng([spec.seed, class_id, instance_seed, 2])
    n = spec.samples_per_clip
    sr = spec.sample_rate
    t = np.arange(n) / sr

    x = np.zeros(n)
    for freq, weight in zip(signature.frequencies, signature.weights):
        jitter = 1.0 + rng.uniform(-0.01, 0.01)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += weight * np.sin(2.0 * np.pi * freq * jitter * t + phase)

    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    spectrum[np.abs(freqs - signature.noise_center) > signature.noise_bandwidth / 2] = 0.0
    noise = np.fft.irfft(spectrum, n)
    noise_std = noise.std()
    if noise_std > 0:
        x += 0.3 * noise / noise_std

    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    envelope = np.exp(-signature.decay * t) * (1.0 + 0.5 * np.sin(2.0 * np.pi * signature.am_rate * t + am_phase)) / 1.5
    x *= envelope

    gain = rng.uniform(0.75, 1.0)
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= PEAK_AMPLITUDE * gain / peak
    return Waveform(samples=x, sample_rate=sr, class_ids=(class_id,), relation=SINGLE)


def _check_singles(a_i: Waveform, a_j: Waveform):
    if a_i.sample_rate != a_j.sample_rate:
        raise PreconditionError(f"Sample rates differ: {a_i.sample_rate} vs {a_j.sample_rate}")
    if a_i.relation != SINGLE or a_j.relation != SINGLE:
        raise PreconditionError("Composition operators take single clips")


def concat(a_i: Waveform, a_j: Waveform) -> Waveform:
    """a_i followed by a_j"""
    _check_singles(a_i, a_j)
    return Waveform(
        samples=np.concatenate([a_i.samples, a_j.samples]),
        sample_rate=a_i.sample_rate,
        class_ids=(a_i.class_ids[0], a_j.class_ids[0]),
        relation=CONCAT,
    )


def overlay(a_i: Waveform, a_j: Waveform) -> Waveform:
    """Elementwise mean of two equal-length clips, peak-limited to 0.9"""
    _check_singles(a_i, a_j)
    if len(a_i) != len(a_j):
        raise PreconditionError(f"Overlay needs equal lengths, got {len(a_i)} and {len(a_j)}")
    mixed = 0.5 * (a_i.samples + a_j.samples)
    peak = np.max(np.abs(mixed)) if mixed.size else 0.0
    if peak > PEAK_AMPLITUDE:
        mixed = mixed * (PEAK_AMPLITUDE / peak)
    return Waveform(
        samples=mixed,
        sample_rate=a_i.sample_rate,
        class_ids=(a_i.class_ids[0], a_j.class_ids[0]),
        relation=OVERLAY,
    )


def split_halves(w: Waveform) -> Tuple[Waveform, Waveform]:
    """Recover the two single clips of a concatenation"""
    if w.relation != CONCAT:
        raise PreconditionError("Only concatenations can be split")
    if len(w) % 2:
        raise PreconditionError("Concatenation has odd length")
    half = len(w) // 2
    return (
        Waveform(w.samples[:half], w.sample_rate, (w.class_ids[0],), SINGLE),
        Waveform(w.samples[half:], w.sample_rate, (w.class_ids[1],), SINGLE),
    )


def apply_time_inversion(pair: Union[Tuple[Waveform, Waveform], Waveform]) -> Waveform:
    """
    Swap the order of the two events: (a_i, a_j) -> a_j followed by a_i

    A concatenation may be passed instead of a pair; it is split first, so
    applying the operator twice restores the original concatenation.
    Samples inside each event are never reversed.
    """
    if isinstance(pair, Waveform):
        pair = split_halves(pair)
    a_i, a_j = pair
    return concat(a_j, a_i)


def write_wav(path: str, w: Waveform):
    """
    Write a waveform as RIFF mono 16-bit PCM

    Args:
        path: Destination file
        w: Waveform to write
    """
    pcm = np.round(w.samples * PCM16_SCALE).astype(np.int16)
    try:
        with sf.SoundFile(path, mode='w', samplerate=w.sample_rate, channels=1,
                          format='WAV', subtype='PCM_16') as f:
            f.comment = json.dumps({'class_ids': list(w.class_ids), 'relation': w.relation})
            f.write(pcm)
    except (RuntimeError, OSError) as e:
        raise DataIOError(f"Failed to write {path}: {e}") from e


def read_wav(path: str,
             class_ids: Optional[Sequence[int]] = None,
             relation: Optional[str] = None) -> Waveform:
    """
    Read a mono 16-bit PCM WAV file

    Args:
        path: Source file
        class_ids: Provenance override; taken from the file comment when omitted
        relation: Relation override; taken from the file comment when omitted

    Returns:
        Waveform whose samples differ from the written ones by at most one
        16-bit quantisation step
    """
    if not os.path.exists(path):
        raise DataIOError(f"No such file: {path}")
    try:
        info = sf.info(path)
    except RuntimeError as e:
        raise WavFormatError(f"Malformed WAV file {path}: {e}") from e

    if info.channels != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {info.channels} channels")
    if info.subtype != 'PCM_16':
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {info.subtype}")

    _check_riff_layout(path)

    try:
        with sf.SoundFile(path) as f:
            pcm = f.read(dtype='int16')
            comment = f.comment
    except RuntimeError as e:
        raise WavFormatError(f"Malformed WAV file {path}: {e}") from e
    if len(pcm) != info.frames:
        raise WavFormatError(f"{path}: header declares {info.frames} frames, read {len(pcm)}")

    provenance = _parse_provenance(comment)
    if relation is None:
        relation = provenance.get('relation', SINGLE)
    if class_ids is None:
        class_ids = provenance.get('class_ids', [UNKNOWN_CLASS] * (1 if relation == SINGLE else 2))

    samples = np.clip(pcm.astype(np.float64) / PCM16_SCALE, -1.0, 1.0)
    return Waveform(samples=samples, sample_rate=int(info.samplerate),
                    class_ids=tuple(class_ids), relation=relation)


def _check_riff_layout(path: str):
    """Every RIFF chunk must lie inside the file; libsndfile silently shortens truncated data"""
    file_size = os.path.getsize(path)
    with open(path, 'rb') as f:
        header = f.read(12)
        if len(header) < 12 or header[:4] != b'RIFF' or header[8:] != b'WAVE':
            raise WavFormatError(f"{path}: not a RIFF/WAVE file")
        declared = struct.unpack('<I', header[4:8])[0] + 8
        if declared > file_size:
            raise WavFormatError(f"{path}: truncated, header declares {declared} bytes, file has {file_size}")

        offset, has_data = 12, False
        while offset + 8 <= file_size:
            f.seek(offset)
            chunk_id, chunk_size = struct.unpack('<4sI', f.read(8))
            end = offset + 8 + chunk_size
            if end > file_size:
                raise WavFormatError(f"{path}: truncated '{chunk_id.decode('latin-1')}' chunk "
                                     f"({end - file_size} bytes missing)")
            has_data = has_data or chunk_id == b'data'
            offset = end + (chunk_size & 1)
    if not has_data:
        raise WavFormatError(f"{path}: no data chunk")


def _parse_provenance(comment: Optional[str]) -> Dict[str, Any]:
    if not comment:
        return {}
    try:
        data = json.loads(comment)
    except ValueError:
        return {}
    return data if isinstance(data, dict) else {}


class Corpus:
    """Lazily synthesised clip collection with a train / held-out instance split"""

    def __init__(self, spec: CorpusSpec):
        spec.validate()
        self.spec = spec
        self.class_names = spec.resolved_class_names()
        self._clips: Dict[Tuple[int, int], Waveform] = {}
        self._lock = threading.Lock()

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    @property
    def train_instances(self) -> List[int]:
        return list(range(self.spec.clips_per_class - self.spec.heldout_clips))

    @property
    def heldout_instances(self) -> List[int]:
        return list(range(self.spec.clips_per_class - self.spec.heldout_clips,
                          self.spec.clips_per_class))

    def clip(self, class_id: int, instance: int) -> Waveform:
        if not 0 <= instance < self.spec.clips_per_class:
            raise PreconditionError(f"instance {instance} out of range")
        key = (class_id, instance)
        with self._lock:
            cached = self._clips.get(key)
        if cached is None:
            cached = synth_clip(class_id, instance, self.spec)
            with self._lock:
                self._clips.setdefault(key, cached)
        return cached

    def class_name(self, class_id: int) -> str:
        if not 0 <= class_id < self.num_classes:
            raise PreconditionError(f"class_id {class_id} out of range [0, {self.num_classes})")
        return self.class_names[class_id]

    def manifest(self, clip_paths: Optional[Dict[Tuple[int, int], str]] = None) -> Dict[str, Any]:
        """JSON-ready description of the corpus"""
        clips = []
        for class_id in range(self.num_classes):
            for instance in range(self.spec.clips_per_class):
                clips.append({
                    'class_id': class_id,
                    'class_name': self.class_names[class_id],
                    'instance': instance,
                    'split': 'heldout' if instance in self.heldout_instances else 'train',
                    'wav_path': (clip_paths or {}).get((class_id, instance)),
                })
        return {
            'num_classes': self.num_classes,
            'class_names': self.class_names,
            'seed': self.spec.seed,
            'sample_rate': self.spec.sample_rate,
            'clip_duration': self.spec.clip_duration,
            'clips_per_class': self.spec.clips_per_class,
            'heldout_clips': self.spec.heldout_clips,
            'clips': clips,
        }
