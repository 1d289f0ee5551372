"""
Caption Generation Module
Training captions, zero-shot prompts, the caption-level inversion operator,
template parsing and the closed toy vocabulary
"""

import json
import re
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from .errors import DataIOError, PreconditionError

SINGLE = 'single'
DUAL = 'dual'
BEFORE = 'before'
AFTER = 'after'
WHILE = 'while'
PROMPT = 'prompt'
RELATIONS = (SINGLE, DUAL, BEFORE, AFTER, WHILE, PROMPT)
TEMPORAL_RELATIONS = (BEFORE, AFTER, WHILE)

# template tag -> (text pattern, number of class slots)
TEMPLATES: Dict[str, Tuple[str, int]] = {
    'single': ("single sound of {0}", 1),
    'dual': ("combined sound of {0} and {1}", 2),
    'before': ("{0} before {1}", 2),
    'after': ("{0} after {1}", 2),
    'while': ("{0} while {1}", 2),
    'sound_of': ("The sound of a {0}", 1),
    'this_is': ("this is a sound of {0}", 1),
    'first': ("In this concatenated sound, the first sound is {0}", 1),
    'second': ("In this concatenated sound, the second sound is {0}", 1),
    'simultaneous': ("Simultaneous sound of {0} and {1}", 2),
}

TASK1_PROMPTS = ('sound_of', 'this_is')

UNKNOWN_TOKEN = '<unk>'


@dataclass(frozen=True)
class Caption:
    """Caption text with the relation it expresses and its class ids in slot order"""

    text: str
    relation: str
    class_ids: Tuple[int, ...]
    template: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise PreconditionError(f"Unknown caption relation '{self.relation}'")
        if self.template not in TEMPLATES:
            raise PreconditionError(f"Unknown caption template '{self.template}'")
        object.__setattr__(self, 'class_ids', tuple(int(c) for c in self.class_ids))
        if len(self.class_ids) != TEMPLATES[self.template][1]:
            raise PreconditionError(
                f"Template '{self.template}' takes {TEMPLATES[self.template][1]} classes, "
                f"got {len(self.class_ids)}"
            )
        if self.relation == SINGLE and len(self.class_ids) != 1:
            raise PreconditionError("single captions carry exactly one class")
        if self.relation in (DUAL,) + TEMPORAL_RELATIONS and len(self.class_ids) != 2:
            raise PreconditionError(f"{self.relation} captions carry exactly two classes")

    def to_dict(self) -> Dict:
        return {'text': self.text, 'relation': self.relation,
                'class_ids': list(self.class_ids), 'template': self.template}


def _name(class_id: int, class_names: Sequence[str]) -> str:
    if not 0 <= class_id < len(class_names):
        raise PreconditionError(f"Unknown class id {class_id}")
    return class_names[class_id]


def _render(template: str, relation: str, class_ids: Sequence[int],
            class_names: Sequence[str]) -> Caption:
    pattern, _ = TEMPLATES[template]
    text = pattern.format(*(_name(c, class_names) for c in class_ids))
    return Caption(text=text, relation=relation, class_ids=tuple(class_ids), template=template)


def single_caption(class_id: int, class_names: Sequence[str]) -> Caption:
    """Caption for one class: single sound of {class}"""
    return _render('single', SINGLE, (class_id,), class_names)


def dual_caption(c_i: int, c_j: int, class_names: Sequence[str]) -> Caption:
    """Caption for a two-class concatenation: combined sound of {i} and {j}"""
    if c_i == c_j:
        raise PreconditionError(f"A dual caption needs two different classes, got {c_i} twice")
    return _render('dual', DUAL, (c_i, c_j), class_names)


def temporal_caption(c_i: int, c_j: int, tau: str, class_names: Sequence[str]) -> Caption:
    """
    Temporal caption "{i} {tau} {j}"

    "i after j" describes audio in which j plays first and i second.

    Args:
        c_i: Class named first
        c_j: Class named second
        tau: One of before, after, while
        class_names: Class names indexed by id

    Returns:
        Caption with relation tau
    """
    if tau not in TEMPORAL_RELATIONS:
        raise PreconditionError(f"Invalid temporal relation '{tau}'")
    if c_i == c_j:
        raise PreconditionError("A temporal caption needs two different classes")
    return _render(tau, tau, (c_i, c_j), class_names)


def invert_caption(cap: Caption, class_names: Sequence[str]) -> Caption:
    """Swap the class order of a before/after caption, keeping its keyword"""
    if cap.relation not in (BEFORE, AFTER):
        raise PreconditionError(f"Only before/after captions can be inverted, got '{cap.relation}'")
    c_i, c_j = cap.class_ids
    return temporal_caption(c_j, c_i, cap.relation, class_names)


def sound_of_prompt(class_id: int, class_names: Sequence[str], template: str = 'sound_of') -> Caption:
    if template not in TASK1_PROMPTS:
        raise PreconditionError(f"Unknown task 1 prompt template '{template}'")
    return _render(template, PROMPT, (class_id,), class_names)


def order_prompt(class_id: int, position: str, class_names: Sequence[str]) -> Caption:
    if position not in ('first', 'second'):
        raise PreconditionError(f"position must be 'first' or 'second', got '{position}'")
    return _render(position, PROMPT, (class_id,), class_names)


def simultaneous_prompt(c_i: int, c_j: int, class_names: Sequence[str]) -> Caption:
    return _render('simultaneous', PROMPT, (c_i, c_j), class_names)


_TEMPLATE_RELATION = {
    'single': SINGLE, 'dual': DUAL, 'before': BEFORE, 'after': AFTER, 'while': WHILE,
}


def _template_regex(pattern: str) -> re.Pattern:
    parts = re.split(r'(\{\d\})', pattern.lower())
    regex = ''.join(r'(\S+)' if re.fullmatch(r'\{\d\}', p) else re.escape(p) for p in parts)
    return re.compile(rf'^{regex}$')


_TEMPLATE_REGEXES = {tag: _template_regex(pattern) for tag, (pattern, _) in TEMPLATES.items()}


def parse_caption(text: str, class_names: Sequence[str]) -> Caption:
    """
    Recover relation, template and class ids from a generated caption or prompt

    Args:
        text: Caption text (case and surrounding whitespace ignored)
        class_names: Class names indexed by id

    Returns:
        The Caption that renders to text
    """
    normalized = ' '.join(text.lower().split())
    index = {name.lower(): k for k, name in enumerate(class_names)}
    for tag, regex in _TEMPLATE_REGEXES.items():
        match = regex.match(normalized)
        if not match:
            continue
        if any(group not in index for group in match.groups()):
            continue
        class_ids = tuple(index[group] for group in match.groups())
        return Caption(
            text=TEMPLATES[tag][0].format(*(class_names[c] for c in class_ids)),
            relation=_TEMPLATE_RELATION.get(tag, PROMPT),
            class_ids=class_ids,
            template=tag,
        )
    raise PreconditionError(f"Caption does not match any template: '{text}'")


def _split(text: str) -> List[str]:
    return text.lower().split()


@dataclass(frozen=True)
class Vocabulary:
    """Dense token -> id map; id 0 is the unknown token"""

    token_to_id: Dict[str, int]

    @property
    def unknown_id(self) -> int:
        return self.token_to_id[UNKNOWN_TOKEN]

    def __len__(self) -> int:
        return len(self.token_to_id)

    @classmethod
    def build(cls, class_names: Sequence[str]) -> 'Vocabulary':
        tokens = [UNKNOWN_TOKEN]
        for pattern, _ in TEMPLATES.values():
            tokens.extend(t for t in _split(pattern) if not re.fullmatch(r'\{\d\}', t))
        tokens.extend(name.lower() for name in class_names)
        token_to_id: Dict[str, int] = {}
        for token in tokens:
            token_to_id.setdefault(token, len(token_to_id))
        return cls(token_to_id=token_to_id)

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> 'Vocabulary':
        try:
            data = json.loads(text)
        except ValueError as e:
            raise DataIOError(f"Vocabulary is not valid JSON: {e}") from e
        if UNKNOWN_TOKEN not in data or sorted(data.values()) != list(range(len(data))):
            raise DataIOError("Vocabulary ids must be dense and include the unknown token")
        return cls(token_to_id={str(k): int(v) for k, v in data.items()})

    def save(self, path: str):
        try:
            with open(path, 'w', encoding='utf-8') as f:
                f.write(self.to_json())
        except OSError as e:
            raise DataIOError(f"Failed to write vocabulary {path}: {e}") from e

    @classmethod
    def load(cls, path: str) -> 'Vocabulary':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return cls.from_json(f.read())
        except OSError as e:
            raise DataIOError(f"Failed to read vocabulary {path}: {e}") from e


def tokenize(text: str, vocab: Vocabulary) -> List[int]:
    """Lowercase, whitespace-split and map to ids; unseen words map to the unknown id"""
    unknown = vocab.unknown_id
    return [vocab.token_to_id.get(token, unknown) for token in _split(text)]


def caption_from_dict(data: Dict) -> Caption:
    return Caption(text=data['text'], relation=data['relation'],
                   class_ids=tuple(data['class_ids']), template=data['template'])
