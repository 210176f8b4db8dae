"""Synthetic task-oriented parsing corpus with a simulated first-pass ASR channel.

A grammar spec holds utterance/parse templates, slot-filler word lists and
the ASR channel (per-word deletion rate, substitution rate and a confusion
table). ``generate`` samples gold utterances, runs them through the channel
to get hypotheses, and assigns splits by a hash of the template instance.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from . import tensor as T
from .layers import EncoderBlock, Embedding, attention_bias
from .tensor import Module

SPLITS = ("train", "valid", "test")
SPECIALS = ("<pad>", "<blank>", "<mask>", "<bos>", "<eos>", "<unk>")
PAD, BLANK, MASK, BOS, EOS, UNK = range(len(SPECIALS))

_SLOT_RE = re.compile(r"\{(\w+)\}")


class SpecError(ValueError):
    """Invalid grammar spec; the message names the offending field."""


class DatasetFormatError(ValueError):
    """Malformed dataset line."""


def is_ontology(tok: str) -> bool:
    return tok.startswith("[") or tok == "]"


# -- grammar ---------------------------------------------------------------

def _times() -> list[str]:
    hours = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve"]
    out = []
    for h in hours:
        out += [f"{h} am", f"{h} pm", f"{h} thirty", f"at {h}"]
    out += ["tonight", "tomorrow", "tomorrow morning", "this evening", "at noon", "at midnight",
            "on monday", "on friday", "next week"]
    return out


def _durations() -> list[str]:
    nums = ["two", "three", "four", "five", "ten", "twenty", "thirty", "forty"]
    return [f"{n} {u}" for n in nums for u in ("minutes", "hours", "seconds")] + ["an hour", "a minute"]


def default_grammar() -> dict:
    """Built-in grammar spec (plain data, same layout as a spec file)."""
    return {
        "name": "desk-slu",
        "max_depth": 2,
        "templates": [
            {"words": "call {contact} on {device}",
             "parse": "[IN:CREATE_CALL [SL:CONTACT {contact} ] [SL:METHOD_CALL {device} ] ]"},
            {"words": "please call {contact} {time}",
             "parse": "[IN:CREATE_CALL [SL:CONTACT {contact} ] [SL:DATE_TIME {time} ] ]"},
            {"words": "remind me to call {contact} {time}",
             "parse": "[IN:CREATE_REMINDER [SL:TODO [IN:CREATE_CALL [SL:CONTACT {contact} ] ] ] [SL:DATE_TIME {time} ] ]"},
            {"words": "remind me to {todo} {time}",
             "parse": "[IN:CREATE_REMINDER [SL:TODO {todo} ] [SL:DATE_TIME {time} ] ]"},
            {"words": "remind me to {todo} at {place}",
             "parse": "[IN:CREATE_REMINDER [SL:TODO {todo} ] [SL:LOCATION {place} ] ]"},
            {"words": "set an alarm for {time} {day}", "parse": "[IN:CREATE_ALARM [SL:DATE_TIME {time} {day} ] ]"},
            {"words": "set a {timer} timer for {duration}",
             "parse": "[IN:CREATE_TIMER [SL:TIMER_NAME {timer} ] [SL:DATE_TIME {duration} ] ]"},
            {"words": "what is the weather in {location} {time}",
             "parse": "[IN:GET_WEATHER [SL:LOCATION {location} ] [SL:DATE_TIME {time} ] ]"},
            {"words": "will it {condition} in {location}",
             "parse": "[IN:GET_WEATHER [SL:WEATHER_ATTRIBUTE {condition} ] [SL:LOCATION {location} ] ]"},
            {"words": "navigate from {place} to {location}",
             "parse": "[IN:GET_DIRECTIONS [SL:SOURCE {place} ] [SL:DESTINATION {location} ] ]"},
            {"words": "directions to {contact} s {building}",
             "parse": "[IN:GET_DIRECTIONS [SL:DESTINATION [IN:GET_LOCATION [SL:CONTACT {contact} ] [SL:LOCATION_TYPE {building} ] ] ] ]"},
            {"words": "play {song} by {artist}",
             "parse": "[IN:PLAY_MUSIC [SL:MUSIC_TRACK_TITLE {song} ] [SL:MUSIC_ARTIST_NAME {artist} ] ]"},
            {"words": "play some {artist} on {app}",
             "parse": "[IN:PLAY_MUSIC [SL:MUSIC_ARTIST_NAME {artist} ] [SL:MUSIC_PROVIDER_NAME {app} ] ]"},
            {"words": "send a message to {contact} saying {message}",
             "parse": "[IN:SEND_MESSAGE [SL:RECIPIENT {contact} ] [SL:CONTENT_EXACT {message} ] ]"},
            {"words": "text {contact} that {message}",
             "parse": "[IN:SEND_MESSAGE [SL:RECIPIENT {contact} ] [SL:CONTENT_EXACT {message} ] ]"},
        ],
        "fillers": {
            "contact": ["john", "jake", "jon", "jane", "jean", "mark", "mike", "matt", "anna", "hannah",
                        "sam", "pam", "tom", "tim", "kate", "kim", "dan", "ann", "ben", "ken", "lisa", "paul",
                        "john smith", "jane doe", "mom", "dad"],
            "location": ["boston", "austin", "dallas", "denver", "paris", "london", "new york", "new jersey",
                         "san diego", "san jose", "los angeles", "seattle", "berlin", "chicago", "miami",
                         "phoenix", "portland", "houston", "atlanta", "madrid", "rome", "tokyo"],
            "place": ["the mall", "the office", "the airport", "home", "work", "the gym", "school",
                      "the station", "the bank", "the park", "the library", "the store"],
            "building": ["house", "office", "apartment", "school", "work", "place"],
            "device": ["mobile", "cell", "home phone", "work phone", "speaker", "video"],
            "day": ["today", "tomorrow", "on monday", "on tuesday", "on wednesday", "on thursday", "on friday",
                    "on saturday", "on sunday"],
            "time": _times(),
            "timer": ["pasta", "egg", "laundry", "oven", "tea", "workout", "nap", "pizza"],
            "duration": _durations(),
            "todo": ["buy milk", "pay rent", "feed the cat", "take out the trash", "water the plants",
                     "book a flight", "walk the dog", "pick up the kids", "clean the house", "buy bread",
                     "call the bank", "renew my passport", "return the books", "pay the bills", "buy a gift",
                     "wash the car", "check the mail", "charge my phone"],
            "song": ["yellow", "hello", "let it be", "shape of you", "halo", "firework", "roar", "fix you",
                     "hey jude", "bad guy", "clocks", "help", "imagine", "thriller", "yesterday", "lovely"],
            "artist": ["adele", "coldplay", "the beatles", "beyonce", "katy perry", "ed sheeran",
                       "billie eilish", "drake", "taylor swift", "queen", "madonna", "prince", "rihanna",
                       "eminem", "shakira", "u two"],
            "app": ["spotify", "pandora", "youtube", "the radio", "apple music", "the speaker"],
            "condition": ["rain", "snow", "be sunny", "be windy", "be cold", "be hot", "storm", "hail"],
            "message": ["i am late", "see you soon", "on my way", "call me back", "running late",
                        "love you", "i will be there at five", "dinner is ready", "good night", "thank you",
                        "happy birthday", "meet me outside"],
        },
        "channel": {
            "deletion_rate": 0.015,
            "substitution_rate": 0.21,
            "confusions": {
                "john": [["jon", 3], ["jake", 1]],
                "jon": [["john", 3]],
                "jake": [["john", 2], ["jane", 1]],
                "jane": [["jean", 2], ["jake", 1]],
                "jean": [["jane", 3]],
                "mark": [["mike", 2], ["matt", 1]],
                "mike": [["mark", 2]],
                "matt": [["mark", 1], ["pam", 1]],
                "anna": [["hannah", 3]],
                "hannah": [["anna", 3]],
                "sam": [["pam", 2], ["dan", 1]],
                "pam": [["sam", 2]],
                "tom": [["tim", 3]],
                "tim": [["tom", 3], ["kim", 1]],
                "kate": [["kim", 1]],
                "kim": [["tim", 1], ["kate", 1]],
                "dan": [["ann", 2], ["ben", 1]],
                "ann": [["dan", 1], ["anna", 1]],
                "ben": [["ken", 2]],
                "ken": [["ben", 2]],
                "boston": [["austin", 3]],
                "austin": [["boston", 3]],
                "dallas": [["denver", 1]],
                "denver": [["dallas", 1]],
                "london": [["paris", 1]],
                "jose": [["diego", 1]],
                "jersey": [["york", 2]],
                "york": [["jersey", 1]],
                "two": [["to", 3]],
                "four": [["for", 3]],
                "for": [["four", 2]],
                "ten": [["then", 1]],
                "eight": [["at", 1]],
                "five": [["nine", 1]],
                "nine": [["five", 1]],
                "rain": [["train", 2]],
                "snow": [["so", 1]],
                "milk": [["mail", 1]],
                "rent": [["rant", 1]],
                "halo": [["hello", 2]],
                "hello": [["halo", 1], ["yellow", 1]],
                "yellow": [["hello", 1]],
                "roar": [["raw", 1]],
                "late": [["lake", 1]],
                "soon": [["noon", 1]],
            },
        },
    }


@dataclass
class Template:
    words: list[str]
    parse: list[str]


@dataclass
class GrammarSpec:
    templates: list[Template]
    fillers: dict[str, list[list[str]]]
    deletion_rate: float
    substitution_rate: float
    confusions: dict[str, list[tuple[str, float]]]
    max_depth: int = 2
    name: str = "grammar"

    @classmethod
    def from_dict(cls, raw: dict) -> "GrammarSpec":
        if not isinstance(raw, dict):
            raise SpecError("spec: expected a mapping at top level")
        for key in ("templates", "fillers", "channel"):
            if key not in raw:
                raise SpecError(f"spec: missing field {key!r}")
        fillers = {}
        for slot, values in raw["fillers"].items():
            if not isinstance(values, list) or not values:
                raise SpecError(f"fillers.{slot}: expected a non-empty list of strings")
            fillers[slot] = [str(v).split() for v in values]
        templates = []
        for i, t in enumerate(raw["templates"]):
            for key in ("words", "parse"):
                if key not in t:
                    raise SpecError(f"templates[{i}]: missing field {key!r}")
            words, parse = str(t["words"]).split(), str(t["parse"]).split()
            slots = set(_SLOT_RE.findall(t["words"]))
            for slot in slots | set(_SLOT_RE.findall(t["parse"])):
                if slot not in fillers:
                    raise SpecError(f"templates[{i}]: placeholder {{{slot}}} has no entry in fillers")
            if set(_SLOT_RE.findall(t["parse"])) - slots:
                raise SpecError(f"templates[{i}].parse: uses a placeholder absent from words")
            templates.append(Template(words, parse))
        ch = raw["channel"]
        for key in ("deletion_rate", "substitution_rate"):
            if key not in ch:
                raise SpecError(f"channel: missing field {key!r}")
            if not 0.0 <= float(ch[key]) <= 1.0:
                raise SpecError(f"channel.{key}: must lie in [0, 1], got {ch[key]}")
        confusions = {}
        for src, reps in (ch.get("confusions") or {}).items():
            entries = []
            for rep, w in reps:
                if rep == src or float(w) <= 0:
                    raise SpecError(f"channel.confusions.{src}: entries need a different word and positive weight")
                entries.append((str(rep), float(w)))
            confusions[str(src)] = entries
        spec = cls(templates=templates, fillers=fillers,
                   deletion_rate=float(ch["deletion_rate"]), substitution_rate=float(ch["substitution_rate"]),
                   confusions=confusions, max_depth=int(raw.get("max_depth", 2)), name=str(raw.get("name", "grammar")))
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_depth": self.max_depth,
            "templates": [{"words": " ".join(t.words), "parse": " ".join(t.parse)} for t in self.templates],
            "fillers": {k: [" ".join(v) for v in vals] for k, vals in self.fillers.items()},
            "channel": {
                "deletion_rate": self.deletion_rate,
                "substitution_rate": self.substitution_rate,
                "confusions": {k: [[r, w] for r, w in v] for k, v in self.confusions.items()},
            },
        }

    def with_channel(self, deletion_rate: float | None = None, substitution_rate: float | None = None) -> "GrammarSpec":
        out = copy.deepcopy(self)
        if deletion_rate is not None:
            out.deletion_rate = deletion_rate
        if substitution_rate is not None:
            out.substitution_rate = substitution_rate
        return out

    def validate(self) -> None:
        if not self.templates:
            raise SpecError("templates: need at least one template")
        depths = []
        for i, t in enumerate(self.templates):
            depth = parse_depth(t.parse)
            if depth > self.max_depth:
                raise SpecError(f"templates[{i}].parse: nesting depth {depth} exceeds max_depth {self.max_depth}")
            depths.append(depth)
        if max(depths) < 2:
            raise SpecError("templates: need at least one compositional (nested intent) template")


def parse_depth(parse: Sequence[str]) -> int:
    """Number of intents on the deepest path (1 for a flat frame)."""
    depth = best = 0
    stack: list[bool] = []
    for tok in parse:
        if tok.startswith("["):
            is_intent = tok.startswith("[IN:")
            stack.append(is_intent)
            depth += is_intent
            best = max(best, depth)
        elif tok == "]":
            depth -= stack.pop()
    return best


def is_well_bracketed(parse: Sequence[str]) -> bool:
    """Root is a single intent frame; slots sit inside intents and intents inside slots."""
    if not parse or not parse[0].startswith("[IN:"):
        return False
    stack: list[str] = []
    for i, tok in enumerate(parse):
        if tok.startswith("["):
            kind = tok[1:3]
            if kind not in ("IN", "SL") or ":" not in tok or len(tok) < 5:
                return False
            if stack and stack[-1] == kind:
                return False
            stack.append(kind)
        elif tok == "]":
            if not stack:
                return False
            stack.pop()
            if not stack and i != len(parse) - 1:
                return False
        elif not stack or stack[-1] != "SL":
            return False
    return not stack


def load_grammar(path: str | Path) -> GrammarSpec:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return GrammarSpec.from_dict(raw)


def save_grammar(spec: GrammarSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(spec.to_dict(), fh, sort_keys=False, allow_unicode=True)


# -- examples and the simulated channel --------------------------------------

@dataclass
class Example:
    gold_words: list[str]
    hyp_words: list[str]
    parse: list[str]
    had_asr_error: bool
    split: str
    id: int = 0


def asr_channel(words: Sequence[str], spec: GrammarSpec, rng: np.random.Generator) -> list[str]:
    """Per word: delete with ``deletion_rate``, else substitute (table words only) with ``substitution_rate``."""
    out = []
    for w in words:
        if rng.random() < spec.deletion_rate:
            continue
        reps = spec.confusions.get(w)
        if reps and rng.random() < spec.substitution_rate:
            weights = np.array([c for _, c in reps], dtype=float)
            out.append(reps[int(rng.choice(len(reps), p=weights / weights.sum()))][0])
        else:
            out.append(w)
    return out


def corruption_probability(words: Sequence[str], spec: GrammarSpec) -> float:
    """Analytic probability that the channel changes ``words``."""
    keep = 1.0
    for w in words:
        p = 1.0 - spec.deletion_rate
        if w in spec.confusions:
            p *= 1.0 - spec.substitution_rate
        keep *= p
    return 1.0 - keep


def instantiate(template: Template, fillers: dict[str, list[str]]) -> tuple[list[str], list[str]]:
    def fill(seq):
        out = []
        for tok in seq:
            m = _SLOT_RE.fullmatch(tok)
            out.extend(fillers[m.group(1)] if m else [tok])
        return out

    return fill(template.words), fill(template.parse)


def split_of(template_idx: int, gold_words: Sequence[str], fractions: Sequence[float]) -> str:
    key = f"{template_idx}|{' '.join(gold_words)}".encode()
    u = int.from_bytes(hashlib.sha1(key).digest()[:8], "big") / 2.0 ** 64
    acc = 0.0
    for name, frac in zip(SPLITS, fractions):
        acc += frac
        if u < acc:
            return name
    return SPLITS[-1]


def generate(spec: GrammarSpec, n: int | dict[str, int], seed: int,
             fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> list[Example]:
    """Sample ``n`` examples (or per-split counts when ``n`` is a dict).

    Templates are chosen uniformly, then each placeholder gets a uniform
    filler. The split is a hash of (template, gold words), so a template
    instance never straddles splits. With per-split quotas, instances whose
    split is already full are re-drawn.
    """
    if isinstance(n, dict):
        quotas = {s: int(n.get(s, 0)) for s in SPLITS}
        total = sum(quotas.values())
    else:
        total = int(n)
        quotas = None
    if total < 1:
        raise ValueError(f"need at least one example, got n={n}")
    rng = np.random.default_rng(seed)
    channel_rng = np.random.default_rng([seed, 1])
    counts = dict.fromkeys(SPLITS, 0)
    out: list[Example] = []
    attempts = 0
    while len(out) < total:
        attempts += 1
        if attempts > 1000 * total:
            raise RuntimeError("could not fill split quotas; instance space too small for the requested split")
        ti = int(rng.integers(len(spec.templates)))
        tpl = spec.templates[ti]
        chosen = {}
        for slot in dict.fromkeys(_SLOT_RE.findall(" ".join(tpl.words))):
            options = spec.fillers[slot]
            chosen[slot] = options[int(rng.integers(len(options)))]
        gold, parse = instantiate(tpl, chosen)
        split = split_of(ti, gold, fractions)
        if quotas is not None:
            if counts[split] >= quotas[split]:
                continue
        counts[split] += 1
        hyp = asr_channel(gold, spec, channel_rng)
        out.append(Example(gold, hyp, parse, hyp != gold, split, id=len(out)))
    return out


def by_split(data: Iterable[Example], split: str) -> list[Example]:
    return [ex for ex in data if ex.split == split]


# -- dataset files -----------------------------------------------------------

_FIELDS = ("gold", "hyp", "parse", "split", "had_asr_error")


def example_to_record(ex: Example) -> dict:
    return {"id": ex.id, "gold": " ".join(ex.gold_words), "hyp": " ".join(ex.hyp_words),
            "parse": " ".join(ex.parse), "split": ex.split, "had_asr_error": ex.had_asr_error}


def save_dataset(data: Sequence[Example], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for ex in data:
            fh.write(json.dumps(example_to_record(ex), ensure_ascii=False) + "\n")
    os.replace(tmp, path)


def load_dataset(path: str | Path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetFormatError(f"{path}:{lineno}: expected an object")
            for key in _FIELDS:
                if key not in rec:
                    raise DatasetFormatError(f"{path}:{lineno}: missing field {key!r}")
            if rec["split"] not in SPLITS:
                raise DatasetFormatError(f"{path}:{lineno}: unknown split {rec['split']!r}")
            out.append(Example(rec["gold"].split(), rec["hyp"].split(), rec["parse"].split(),
                               bool(rec["had_asr_error"]), rec["split"], int(rec.get("id", len(out)))))
    return out


# -- vocabulary ----------------------------------------------------------------

class Vocab:
    """Joint vocabulary: special tokens, then words, then ontology tokens."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(tokens)
        if tuple(self.itos[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, data: Iterable[Example]) -> "Vocab":
        words, onto = set(), set()
        for ex in data:
            words.update(ex.gold_words)
            words.update(ex.hyp_words)
            for tok in ex.parse:
                (onto if is_ontology(tok) else words).add(tok)
        return cls(list(SPECIALS) + sorted(words) + sorted(onto))

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def output_mask(self) -> np.ndarray:
        """True for ids a parse may contain (everything except specials)."""
        m = np.ones(len(self), dtype=bool)
        m[:len(SPECIALS)] = False
        return m


# -- first-pass embedding ------------------------------------------------------

@dataclass
class FirstPassOutput:
    """Batched first-pass interface: hypothesis tokens plus text and audio embeddings.

    ``emb_text`` is (batch, T, D) and ``emb_aud`` is (batch, A, D); the masks
    flag real positions. A single example is a batch of one.
    """
    text_tokens: np.ndarray
    text_mask: np.ndarray
    emb_text: T.Tensor
    aud_mask: np.ndarray
    emb_aud: T.Tensor
    had_asr_error: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        if self.emb_text.shape[-1] != self.emb_aud.shape[-1]:
            raise T.DimensionError(
                f"text and audio channel widths differ: {self.emb_text.shape} vs {self.emb_aud.shape}")
        if self.text_mask.sum(axis=1).min() < 1 or self.aud_mask.sum(axis=1).min() < 1:
            raise ValueError("every example needs at least one text and one audio position")


def pad_ids(seqs: Sequence[Sequence[int]], min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    width = max([min_len] + [len(s) for s in seqs])
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def acoustic_unit(word: str, units: int) -> int:
    """Hash a word into one of ``units`` acoustic buckets (offset past the special ids)."""
    h = int.from_bytes(hashlib.sha1(word.encode("utf-8")).digest()[:8], "big")
    return len(SPECIALS) + h % units


def audio_ids(words: Sequence[str], vocab: "Vocab", units: int) -> list[int]:
    """Audio-channel ids for gold words: word ids when ``units`` is 0, else hashed buckets."""
    if units <= 0:
        return vocab.encode(words)
    return [acoustic_unit(w, units) for w in words]


class FirstPassEmbedder(Module):
    """Stands in for the first-pass ASR: separate text and audio tables, plus a self-attention layer on audio.

    With ``audio_units > 0`` the audio table is indexed by hashed acoustic
    buckets rather than words, so several words sound alike and the audio
    channel alone cannot always recover the transcript.
    """

    def __init__(self, vocab_size: int, dim: int, heads: int, rng: np.random.Generator, dropout: float = 0.0,
                 audio_units: int = 0):
        self.audio_units = audio_units
        self.text_table = Embedding(vocab_size, dim, rng)
        self.audio_table = Embedding(len(SPECIALS) + audio_units if audio_units > 0 else vocab_size, dim, rng)
        self.audio_pos = Embedding(256, dim, rng)
        self.audio_block = EncoderBlock(dim, heads, 2 * dim, rng, dropout)

    def __call__(self, text_ids: Sequence[Sequence[int]], audio_ids: Sequence[Sequence[int]],
                 had_asr_error=None, rng=None) -> FirstPassOutput:
        # an empty hypothesis (everything deleted) becomes a single <unk>
        text_ids = [list(s) if len(s) else [UNK] for s in text_ids]
        tids, tmask = pad_ids(text_ids)
        aids, amask = pad_ids(audio_ids)
        emb_text = self.text_table(tids)
        aud = self.audio_table(aids) + self.audio_pos(np.arange(aids.shape[1]))[None]
        emb_aud = self.audio_block(aud, attention_bias(amask, aids.shape[1]), rng)
        err = np.zeros(len(tids), dtype=bool) if had_asr_error is None else np.asarray(had_asr_error, dtype=bool)
        return FirstPassOutput(tids, tmask, emb_text, amask, emb_aud, err)


def embed_first_pass(examples: Sequence[Example], vocab: Vocab, embedder: FirstPassEmbedder,
                     hyp_override: Sequence[Sequence[str]] | None = None, rng=None) -> FirstPassOutput:
    """Embed hypotheses (text channel) and gold words (audio channel) for a batch of examples."""
    hyps = hyp_override if hyp_override is not None else [ex.hyp_words for ex in examples]
    return embedder([vocab.encode(h) for h in hyps],
                    [audio_ids(ex.gold_words, vocab, embedder.audio_units) for ex in examples],
                    [ex.had_asr_error for ex in examples], rng)
