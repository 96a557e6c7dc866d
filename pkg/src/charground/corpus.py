"""Entity-tagged narrative documents and character/place candidate pairs.

A document is a token sequence plus typed entity mentions produced by an
upstream tagger (PER for characters; LOC, FAC, GPE for places). A candidate
pair is one character mention and one place mention close enough to be
labeled: writing the character span as tokens c..c+k and the place span as
l..l+m, the pair qualifies when

    c+k - l <= max_gap   if c+k > l,
    l+m - c <= max_gap   otherwise,

with max_gap = 10 by default. The rule is applied exactly as stated,
including its asymmetry; pairs are extracted across sentence boundaries
since only token distance is constrained.

Spans are inclusive on both ends. Tokenization is whatever the tagger
delivered; this module never re-tokenizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .util import atomic_write_text

PERSON_TYPE = "PER"
PLACE_TYPES = ("LOC", "FAC", "GPE")
ENTITY_TYPES = (PERSON_TYPE,) + PLACE_TYPES

DEFAULT_MAX_GAP = 10


class CorpusError(ValueError):
    """Invalid document structure or corpus file contents."""


class CorpusFormatError(CorpusError):
    """Malformed corpus/pairs file; carries the offending line and field."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"field {field!r}: "
        super().__init__(prefix + message)


@dataclass(frozen=True, slots=True)
class Token:
    index: int
    text: str


@dataclass(frozen=True, slots=True)
class EntityMention:
    """A typed entity span; start/end are inclusive token indices."""

    mention_id: str
    entity_type: str
    start: int
    end: int
    entity_id: str | None = None

    def __post_init__(self) -> None:
        if self.entity_type not in ENTITY_TYPES:
            raise CorpusError(
                f"mention {self.mention_id!r}: entity_type must be one of "
                f"{ENTITY_TYPES}, got {self.entity_type!r}"
            )
        if not (0 <= self.start <= self.end):
            raise CorpusError(
                f"mention {self.mention_id!r}: need 0 <= start <= end, "
                f"got start={self.start}, end={self.end}"
            )

    @property
    def is_character(self) -> bool:
        return self.entity_type == PERSON_TYPE

    @property
    def is_place(self) -> bool:
        return self.entity_type in PLACE_TYPES


@dataclass(frozen=True, slots=True)
class Document:
    """A tokenized document with its entity mentions.

    Invariants enforced at construction: token indices contiguous from 0,
    non-empty token texts, mention spans inside the token range, unique
    mention ids.
    """

    doc_id: str
    tokens: tuple[Token, ...]
    mentions: tuple[EntityMention, ...]
    year: int | None = None

    def __post_init__(self) -> None:
        for pos, tok in enumerate(self.tokens):
            if tok.index != pos:
                raise CorpusError(
                    f"doc {self.doc_id!r}: token indices must be contiguous from 0; "
                    f"position {pos} has index {tok.index}"
                )
            if not tok.text:
                raise CorpusError(f"doc {self.doc_id!r}: token {pos} has empty text")
        n = len(self.tokens)
        seen: set[str] = set()
        for m in self.mentions:
            if m.end >= n:
                raise CorpusError(
                    f"doc {self.doc_id!r}: mention {m.mention_id!r} span "
                    f"[{m.start}, {m.end}] exceeds document length {n}"
                )
            if m.mention_id in seen:
                raise CorpusError(
                    f"doc {self.doc_id!r}: duplicate mention_id {m.mention_id!r}"
                )
            seen.add(m.mention_id)

    @classmethod
    def from_texts(
        cls,
        doc_id: str,
        token_texts: Iterable[str],
        mentions: Iterable[EntityMention] = (),
        year: int | None = None,
    ) -> "Document":
        tokens = tuple(Token(i, t) for i, t in enumerate(token_texts))
        return cls(doc_id=doc_id, tokens=tokens, mentions=tuple(mentions), year=year)

    def __len__(self) -> int:
        return len(self.tokens)

    def mention_text(self, mention: EntityMention) -> str:
        return " ".join(t.text for t in self.tokens[mention.start : mention.end + 1])

    def characters(self) -> list[EntityMention]:
        return [m for m in self.mentions if m.is_character]

    def places(self) -> list[EntityMention]:
        return [m for m in self.mentions if m.is_place]


@dataclass(frozen=True, slots=True)
class CandidatePair:
    """One character mention paired with one place mention from the same doc."""

    pair_id: str
    doc_id: str
    character: EntityMention
    place: EntityMention
    distance: int

    def __post_init__(self) -> None:
        if not self.character.is_character:
            raise CorpusError(
                f"pair {self.pair_id!r}: character mention has type "
                f"{self.character.entity_type!r}"
            )
        if not self.place.is_place:
            raise CorpusError(
                f"pair {self.pair_id!r}: place mention has type "
                f"{self.place.entity_type!r}"
            )
        if self.distance < 0:
            raise CorpusError(f"pair {self.pair_id!r}: negative distance {self.distance}")


def pair_id_for(doc_id: str, character: EntityMention, place: EntityMention) -> str:
    return f"{doc_id}:{character.mention_id}:{place.mention_id}"


def window_distance(character: EntityMention, place: EntityMention) -> int:
    """Token distance used by the candidate rule.

    Returns character_end - place_start when the character span ends after
    the place span starts, otherwise place_end - character_start. The two
    branches are intentionally not symmetric.
    """
    if character.end > place.start:
        return character.end - place.start
    return place.end - character.start


def extract_candidate_pairs(doc: Document, max_gap: int = DEFAULT_MAX_GAP) -> list[CandidatePair]:
    """All character/place mention pairs within max_gap tokens of each other.

    Every PER x {LOC, FAC, GPE} mention combination is tested; each passing
    combination yields one pair (repeat co-mentions are not deduplicated).
    Output order is deterministic regardless of the document's mention order:
    by character start, then place start, then span ends and mention ids.
    """
    if max_gap < 0:
        raise ValueError(f"max_gap must be non-negative, got {max_gap}")
    pairs = []
    for character in doc.characters():
        for place in doc.places():
            distance = window_distance(character, place)
            if distance <= max_gap:
                pairs.append(
                    CandidatePair(
                        pair_id=pair_id_for(doc.doc_id, character, place),
                        doc_id=doc.doc_id,
                        character=character,
                        place=place,
                        distance=distance,
                    )
                )
    pairs.sort(
        key=lambda p: (
            p.character.start,
            p.place.start,
            p.character.end,
            p.place.end,
            p.character.mention_id,
            p.place.mention_id,
        )
    )
    return pairs


def context_window(pair: CandidatePair, doc: Document, width: int) -> tuple[int, int]:
    """Inclusive token range covering both mentions plus `width` tokens each side.

    The widths used by the standard hyperparameter grid are 10, 50 and 100;
    any positive width is accepted. The range is clamped to the document.
    """
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    first = min(pair.character.start, pair.place.start)
    last = max(pair.character.end, pair.place.end)
    return max(0, first - width), min(len(doc) - 1, last + width)


# ---------------------------------------------------------------------------
# Ingestion format: one JSON object per line, UTF-8.
#   {"doc_id", "year", "tokens": [str], "mentions": [{"mention_id",
#    "entity_type", "start", "end", "entity_id"}]}
# ---------------------------------------------------------------------------

def _parse_mention(obj: dict, line: int, pos: int) -> EntityMention:
    where = f"mentions[{pos}]"
    if not isinstance(obj, dict):
        raise CorpusFormatError("mention must be an object", line=line, field=where)
    for key in ("mention_id", "entity_type", "start", "end"):
        if key not in obj:
            raise CorpusFormatError("missing key", line=line, field=f"{where}.{key}")
    if not isinstance(obj["start"], int) or not isinstance(obj["end"], int):
        raise CorpusFormatError(
            "start/end must be integers", line=line, field=f"{where}.start"
        )
    try:
        return EntityMention(
            mention_id=str(obj["mention_id"]),
            entity_type=str(obj["entity_type"]),
            start=obj["start"],
            end=obj["end"],
            entity_id=None if obj.get("entity_id") in (None, "") else str(obj["entity_id"]),
        )
    except CorpusError as exc:
        raise CorpusFormatError(str(exc), line=line, field=where) from exc


def parse_document_line(text: str, line: int = 0) -> Document:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"invalid JSON ({exc.msg})", line=line) from exc
    if not isinstance(obj, dict):
        raise CorpusFormatError("document line must be a JSON object", line=line)
    for key in ("doc_id", "tokens", "mentions"):
        if key not in obj:
            raise CorpusFormatError("missing key", line=line, field=key)
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise CorpusFormatError("tokens must be a list of strings", line=line, field="tokens")
    year = obj.get("year")
    if year is not None and not isinstance(year, int):
        raise CorpusFormatError("year must be an integer or null", line=line, field="year")
    mentions = [
        _parse_mention(m, line, i) for i, m in enumerate(obj["mentions"])
    ]
    try:
        return Document.from_texts(str(obj["doc_id"]), tokens, mentions, year=year)
    except CorpusError as exc:
        raise CorpusFormatError(str(exc), line=line, field="mentions") from exc


def iter_corpus(path: str | Path) -> Iterator[Document]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            yield parse_document_line(raw, line=lineno)


def load_corpus(path: str | Path) -> list[Document]:
    """Load a JSONL corpus, validating every document invariant.

    Raises CorpusFormatError naming the line and field for malformed input,
    and CorpusError for duplicate doc_ids.
    """
    docs: list[Document] = []
    seen: set[str] = set()
    for doc in iter_corpus(path):
        if doc.doc_id in seen:
            raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        docs.append(doc)
    return docs


def document_to_json(doc: Document) -> str:
    obj = {
        "doc_id": doc.doc_id,
        "year": doc.year,
        "tokens": [t.text for t in doc.tokens],
        "mentions": [
            {
                "mention_id": m.mention_id,
                "entity_type": m.entity_type,
                "start": m.start,
                "end": m.end,
                "entity_id": m.entity_id,
            }
            for m in doc.mentions
        ],
    }
    return json.dumps(obj, ensure_ascii=False)


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    atomic_write_text(path, "".join(document_to_json(d) + "\n" for d in docs))


# ---------------------------------------------------------------------------
# Pair export: one JSON object per line. Mention surfaces are included so
# downstream prediction does not need the corpus at hand.
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class PairRecord:
    """An exported candidate pair together with its mention surface forms."""

    pair: CandidatePair
    character_text: str
    place_text: str


def _mention_obj(m: EntityMention, text: str) -> dict:
    return {
        "mention_id": m.mention_id,
        "entity_type": m.entity_type,
        "start": m.start,
        "end": m.end,
        "entity_id": m.entity_id,
        "text": text,
    }


def pair_to_json(pair: CandidatePair, doc: Document) -> str:
    obj = {
        "pair_id": pair.pair_id,
        "doc_id": pair.doc_id,
        "distance": pair.distance,
        "character": _mention_obj(pair.character, doc.mention_text(pair.character)),
        "place": _mention_obj(pair.place, doc.mention_text(pair.place)),
    }
    return json.dumps(obj, ensure_ascii=False)


def export_pairs(pairs_by_doc: Iterable[tuple[Document, list[CandidatePair]]], path: str | Path) -> int:
    """Write pairs (grouped with their documents) as JSONL; returns the count."""
    lines = []
    for doc, pairs in pairs_by_doc:
        for pair in pairs:
            lines.append(pair_to_json(pair, doc) + "\n")
    atomic_write_text(path, "".join(lines))
    return len(lines)


def load_pair_records(path: str | Path) -> list[PairRecord]:
    records: list[PairRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            for key in ("pair_id", "doc_id", "distance", "character", "place"):
                if key not in obj:
                    raise CorpusFormatError("missing key", line=lineno, field=key)
            character = _parse_mention(obj["character"], lineno, 0)
            place = _parse_mention(obj["place"], lineno, 1)
            pair = CandidatePair(
                pair_id=str(obj["pair_id"]),
                doc_id=str(obj["doc_id"]),
                character=character,
                place=place,
                distance=int(obj["distance"]),
            )
            records.append(
                PairRecord(
                    pair=pair,
                    character_text=str(obj["character"].get("text", "")),
                    place_text=str(obj["place"].get("text", "")),
                )
            )
    return records
