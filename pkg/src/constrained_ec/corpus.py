"""Parallel ASR/reference corpora: loading, synthetic generation, error injection."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence

logger = logging.getLogger(__name__)

ERROR_TYPES = ("grammatical", "similar_sound", "entity", "insertion", "delete")


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusPair:
    asr_text: str
    ref_text: str
    error_types: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        if not self.ref_text.strip():
            raise ValueError("ref_text must be nonempty")

    def to_record(self) -> dict:
        record = {"asr": self.asr_text, "ref": self.ref_text}
        if self.error_types is not None:
            record["error_types"] = sorted(self.error_types)
        return record


def _parse_jsonl(line: str, where: str) -> CorpusPair:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(record, dict):
        raise CorpusFormatError(f"{where}: expected an object")
    for key in ("asr", "ref"):
        if not isinstance(record.get(key), str):
            raise CorpusFormatError(f"{where}: missing string field {key!r}")
    types = record.get("error_types")
    try:
        return CorpusPair(record["asr"], record["ref"], frozenset(types) if types is not None else None)
    except ValueError as exc:
        raise CorpusFormatError(f"{where}: {exc}") from None


def _parse_tsv(line: str, where: str) -> CorpusPair:
    cols = line.split("\t")
    if len(cols) != 2:
        raise CorpusFormatError(f"{where}: expected 2 tab-separated columns, got {len(cols)}")
    try:
        return CorpusPair(cols[0], cols[1])
    except ValueError as exc:
        raise CorpusFormatError(f"{where}: {exc}") from None


def load_corpus(path, fmt: Optional[str] = None) -> List[CorpusPair]:
    """Read ``jsonl`` (fields ``asr``/``ref``) or ``tsv`` (asr<TAB>ref) pairs.

    The format defaults to the file suffix. Blank lines are skipped; a
    malformed line raises CorpusFormatError naming the file and line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    fmt = fmt or ("tsv" if path.suffix == ".tsv" else "jsonl")
    if fmt not in ("jsonl", "tsv"):
        raise ValueError(f"unknown corpus format {fmt!r}")
    parse = _parse_jsonl if fmt == "jsonl" else _parse_tsv
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.strip():
                pairs.append(parse(line, f"{path}:{lineno}"))
    if not pairs:
        logger.warning("corpus %s is empty", path)
    return pairs


def save_corpus(pairs: Iterable[CorpusPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_record()) + "\n")


# synthetic spoken-language-understanding style references

CITIES = (
    "boston denver dallas atlanta chicago orlando tacoma seattle phoenix houston miami "
    "detroit milwaukee indianapolis pittsburgh baltimore philadelphia cleveland memphis "
    "nashville charlotte raleigh toronto montreal oakland newark columbus cincinnati "
    "minneapolis portland sacramento tampa"
).split() + ["san francisco", "san diego", "new york", "los angeles", "salt lake city",
             "las vegas", "kansas city", "st louis"]
AIRLINES = ["american", "delta", "united", "continental", "us air", "northwest",
            "southwest", "alaska airlines", "jetblue"]
DAYS = "monday tuesday wednesday thursday friday saturday sunday".split()
MONTHS = "january february march april may june july august september october november december".split()
ORDINALS = "first second third fourth fifth sixth seventh eighth ninth tenth eleventh twelfth".split()
TIMES = ["in the morning", "in the afternoon", "in the evening", "after five pm",
         "before ten am", "around noon", "at night", "early tomorrow"]
WHEN = ["this weekend", "tomorrow", "next week", "tonight", "today", "on friday", "this evening"]
FARE_CLASS = ["first class", "coach", "business class", "round trip", "one way"]
WEATHER_ADJ = ["hotter", "colder", "warmer", "windy", "cloudy"]
PRECIP = ["rain", "snow", "storm"]
PLACES = ["the airport", "the mall", "downtown", "the stadium", "the train station",
          "my office", "the hospital", "the museum", "the beach"]
EVENTS = ["sporting", "music", "comedy", "art", "food", "theater"]
NUMBERS = "two three four five six seven eight".split()

TEMPLATES = [
    "show me flights from {city} to {city} on {day}",
    "i need a flight from {city} to {city} {time}",
    "what is the cheapest airfare from {city} to {city}",
    "list all {airline} flights from {city} to {city}",
    "which flights leave {city} on {date} {time}",
    "i would like to fly {airline} from {city} to {city} on {day}",
    "what flights arrive in {city} {time} on {day}",
    "how much is a {fare} ticket from {city} to {city}",
    "will it get {weather} in {city} {when}",
    "is it going to {precip} in {city} {when}",
    "what is the weather like in {city} {when}",
    "how long will it take to drive to {place} from {place}",
    "how far is {place} from here",
    "is there heavy traffic on the way to {place}",
    "are there any {event} events in {city} {when}",
    "find {event} shows in {city} {when}",
    "book a table for {number} at a restaurant in {city} {when}",
    "give me directions to {place} avoiding tolls",
    "show me ground transportation in {city} on {date}",
    "what are the {event} events happening in {city} {when}",
    "i want a {fare} flight to {city} leaving {day} {time}",
    "does {airline} have a flight from {city} to {city} {time}",
]

_SLOTS = {
    "city": CITIES, "airline": AIRLINES, "day": DAYS, "time": TIMES, "when": WHEN,
    "fare": FARE_CLASS, "weather": WEATHER_ADJ, "precip": PRECIP, "place": PLACES,
    "event": EVENTS, "number": NUMBERS,
}


def _fill(template: str, rng: random.Random) -> str:
    out = []
    for word in template.split():
        if word.startswith("{") and word.endswith("}"):
            slot = word[1:-1]
            if slot == "date":
                out.append(f"{rng.choice(MONTHS)} {rng.choice(ORDINALS)}")
            else:
                out.append(rng.choice(_SLOTS[slot]))
        else:
            out.append(word)
    return " ".join(out)


def generate_references(n: int, seed: int = 0) -> List[str]:
    """``n`` template-filled reference sentences, deterministic in ``seed``."""
    rng = random.Random(seed)
    return [_fill(rng.choice(TEMPLATES), rng) for _ in range(n)]


# error injection

DEFAULT_CONFUSIONS: Dict[str, List[str]] = {
    "to": ["two", "too"], "two": ["to", "too"], "for": ["four", "far"], "from": ["form"],
    "flight": ["fright", "flite"], "flights": ["frights", "fights"], "fly": ["fry", "flee"],
    "airfare": ["stair", "air fair"], "way": ["weigh"], "one": ["won"], "eight": ["ate"],
    "weather": ["whether"], "rain": ["reign"], "there": ["their"], "here": ["hear"],
    "week": ["weak"], "hotter": ["otter"], "leave": ["leaf", "sleep"], "time": ["thyme"],
    "morning": ["mourning"], "drive": ["dry"], "raleigh": ["roll e"], "orlando": ["or land oh"],
    "ticket": ["tick it"], "noon": ["new"], "by": ["buy"], "which": ["witch"],
    "would": ["wood"], "in": ["inn"], "show": ["so"], "all": ["awl"], "night": ["knight"],
    "four": ["for"], "need": ["knead"], "tomorrow": ["to borrow"], "denver": ["then ver"],
    "boston": ["boss ton"], "dallas": ["dollars"], "miami": ["my ami"], "seattle": ["see attle"],
    "cheapest": ["cheap est"], "snow": ["no"], "traffic": ["tragic"], "events": ["evens"],
    "museum": ["music"], "beach": ["bee"], "weekend": ["week and"], "tolls": ["toes"],
}

_IRREGULAR_FORMS = {
    "is": "are", "are": "is", "a": "an", "an": "a", "does": "do", "do": "does",
    "cheapest": "cheaper", "hotter": "hottest", "colder": "coldest", "warmer": "warmest",
    "leave": "leaves", "have": "has", "me": "my", "my": "me", "i": "me", "will": "would",
    "what": "which", "which": "what", "much": "many", "long": "longer", "far": "farther",
}
_FILLERS = ["uh", "um", "a", "the", "and", "so"]
_VOWELS = "aeiou"


@dataclass(frozen=True)
class ErrorProfile:
    """Per-token probability of each corruption type; the rates must sum to <= 1."""

    grammatical: float = 0.0
    similar_sound: float = 0.0
    entity: float = 0.0
    insertion: float = 0.0
    delete: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            rate = getattr(self, f.name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{f.name} rate {rate} outside [0, 1]")
        if self.total() > 1.0 + 1e-12:
            raise ValueError("error rates sum to more than 1")

    def total(self) -> float:
        return sum(getattr(self, f.name) for f in fields(self))

    def rates(self) -> Dict[str, float]:
        return {t: getattr(self, t) for t in ERROR_TYPES}


DEFAULT_PROFILE = ErrorProfile(grammatical=0.04, similar_sound=0.04, entity=0.03,
                               insertion=0.02, delete=0.02)


def load_confusions(path) -> Dict[str, List[str]]:
    """Confusion table file: ``word<TAB>alternative[<TAB>alternative...]`` per line."""
    table: Dict[str, List[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) < 2 or not all(cols):
            raise CorpusFormatError(f"{path}:{lineno}: expected word and at least one alternative")
        table.setdefault(cols[0], []).extend(cols[1:])
    return table


def _char_edit(word: str, rng: random.Random) -> str:
    if len(word) < 3:
        return word + word[-1]
    i = rng.randrange(1, len(word))
    if word[i] in _VOWELS:
        return word[:i] + rng.choice([v for v in _VOWELS if v != word[i]]) + word[i + 1:]
    return word[:i] + word[i + 1:]


def _word_form(word: str, rng: random.Random) -> str:
    if word in _IRREGULAR_FORMS:
        return _IRREGULAR_FORMS[word]
    for suffix, options in (("ing", ["", "ed"]), ("ed", ["", "ing"]), ("est", ["er"]),
                            ("er", ["est"]), ("s", [""])):
        if word.endswith(suffix) and len(word) > len(suffix) + 1:
            return word[: -len(suffix)] + rng.choice(options)
    return word + rng.choice(["s", "ed", "ing"])


def _similar_sound(word: str, rng: random.Random, confusions) -> str:
    if word in confusions:
        return rng.choice(confusions[word])
    return _char_edit(word, rng)


def _entity(word: str, rng: random.Random) -> str:
    if len(word) < 4:
        return _char_edit(word, rng)
    cut = rng.randrange(2, len(word) - 1)
    if rng.random() < 0.5:
        return word[:cut]
    tail = word[cut:]
    if tail[0] in _VOWELS:
        tail = rng.choice([v for v in _VOWELS if v != tail[0]]) + tail[1:]
    return f"{word[:cut]} {tail}"


def _insertion(next_word: str, rng: random.Random) -> str:
    if len(next_word) >= 5 and rng.random() < 0.5:
        return next_word[: rng.randrange(3, len(next_word))]
    return rng.choice(_FILLERS)


def corrupt_word(word: str, error_type: str, rng: random.Random, confusions=None) -> List[str]:
    """Replacement words for ``word`` under one corruption type."""
    confusions = DEFAULT_CONFUSIONS if confusions is None else confusions
    if error_type == "delete":
        return []
    if error_type == "insertion":
        return [_insertion(word, rng), word]
    if error_type == "grammatical":
        out = _word_form(word, rng)
    elif error_type == "similar_sound":
        out = _similar_sound(word, rng, confusions)
    elif error_type == "entity":
        out = _entity(word, rng)
    else:
        raise ValueError(f"unknown error type {error_type!r}")
    if out == word:
        out = _char_edit(word, rng)
    return out.split()


def inject_errors(refs: Sequence[str], profile: ErrorProfile, seed: int = 0,
                  confusions=None) -> List[CorpusPair]:
    """Corrupt each reference word independently according to ``profile``.

    Every reference word draws one uniform number; the profile's rates
    partition [0, 1) into bands (grammatical, similar_sound, entity,
    insertion, delete, then untouched). Insertions place a filler or a
    partial repeat in front of the word.
    """
    rng = random.Random(seed)
    bands = []
    acc = 0.0
    for error_type in ERROR_TYPES:
        acc += getattr(profile, error_type)
        bands.append((acc, error_type))
    pairs = []
    for ref in refs:
        out: List[str] = []
        applied = set()
        for word in ref.split():
            u = rng.random()
            chosen = next((t for bound, t in bands if u < bound), None)
            if chosen is None:
                out.append(word)
                continue
            applied.add(chosen)
            out.extend(corrupt_word(word, chosen, rng, confusions))
        pairs.append(CorpusPair(" ".join(out), ref, frozenset(applied)))
    return pairs


def inject_single_error(ref: str, error_type: str, rng: random.Random, confusions=None) -> CorpusPair:
    """Corrupt exactly one randomly chosen word of ``ref`` with ``error_type``."""
    words = ref.split()
    i = rng.randrange(len(words))
    out = words[:i] + corrupt_word(words[i], error_type, rng, confusions) + words[i + 1:]
    return CorpusPair(" ".join(out), ref, frozenset({error_type}))


def typed_test_set(refs: Sequence[str], seed: int = 0, types: Sequence[str] = ERROR_TYPES,
                   confusions=None) -> List[CorpusPair]:
    """One single-error pair per (reference, type), types cycling over ``refs``."""
    rng = random.Random(seed)
    return [inject_single_error(ref, types[i % len(types)], rng, confusions)
            for i, ref in enumerate(refs)]
