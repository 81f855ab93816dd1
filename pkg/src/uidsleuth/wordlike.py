"""Word-likeness scoring for the review queue.

Single-crawler tokens cannot be cross-checked against another profile, so the
review queue sorts them by how much they look like natural language, locale
tags, coordinates or domain names: the likeliest false positives come first.
Nothing is dropped based on this score by default.
"""

from __future__ import annotations

import re

_LOCALE_RE = re.compile(r"^[a-z]{2,3}[-_][A-Za-z]{2,4}$")
_DOMAIN_RE = re.compile(r"^(?:[a-z0-9](?:[a-z0-9-]*[a-z0-9])?\.)+[a-z]{2,10}$")
_COORD_RE = re.compile(r"^-?\d{1,3}\.\d+\s*,\s*-?\d{1,3}\.\d+$")
_HEXISH_RE = re.compile(r"^[0-9a-f]+$")
_DELIMITERS_RE = re.compile(r"[-_.\s+/]+")

# Small embedded vocabulary: common English words plus the web/UI terms that
# dominate obviously-benign token values. Deliberately short; recall matters
# less than being deterministic and dependency-free.
_WORD_LIST = """
about access account action active add address admin advert age agent alert all allow
amount analytics anchor api app apple apply april area article asset audio august auto
back badge banner base basket best beta bill black blog blue board body book box brand
brown build business button buy cache calendar call campaign cancel card cart case
category center change channel chart chat check choice city class clear click client
close cloud code color comment company config confirm connect contact content control
cookie copy count country coupon cover create credit current custom daily dark dash
data date day deal december default delete delivery demo dental design desktop detail
device digital direct discount display doc domain down download draft drop east edit
email embed empty enable end enter error event exit expand export extra false fast
feature feed field file filter final find first flag focus folder follow font footer
form forum frame free friend from full game gender get gift global goal gold good
graph gray green grid group guest guide handle hash head header health hello help
hidden hide high history home host hour house icon image import inbox index info
input internal invite item january july june key label lang language large last
layout lead left legal level light like line link list live load local location lock
login logo logout long magnolia mail main manage map march market match may media
medium member menu message meta mobile mode model modal money month more move music
name nav network new news next night north note november offer office old open option
order other outline over owner page panel paper partner pass password pause pay
payment phone photo pixel place plan play player plus policy popup post preview price
print privacy private product profile promo public purchase push query queue quick
quote radio range rate read reason recent record red refer region register related
remove report request reset result retail return review right role room route row
rule sale sample save school score screen search second secret section secure select
sell send september server service session set share sheet shop short show side sign
simple site size slide small social sort sound south space sport stat state status
step stop store story stream string style submit success summer support sweet switch
system tab table tag target task team tech temp term test text theme thread time
title toggle token tool top topic total touch track trade true trust type under
update upload url user value version video view visit watch water web week west
white whitepaper widget width window winter word work world wrap year yellow zone
""".split()

WORDS = frozenset(_WORD_LIST)

_MAX_SEGMENT_WORD = 24


def _is_wordish(part: str) -> bool:
    if not part:
        return False
    if part.isdigit():
        return True
    low = part.lower()
    if low in WORDS:
        return True
    if low.endswith("s") and low[:-1] in WORDS:
        return True
    # Short all-alpha fragments read as acronyms or abbreviations.
    return part.isalpha() and len(part) <= 3


def _word_break(value: str) -> bool:
    """True when the whole string splits into known words of length >= 3."""
    n = len(value)
    if n > _MAX_SEGMENT_WORD * 4:
        return False
    reachable = [False] * (n + 1)
    reachable[0] = True
    for i in range(n):
        if not reachable[i]:
            continue
        for j in range(i + 3, min(n, i + _MAX_SEGMENT_WORD) + 1):
            piece = value[i:j]
            if piece in WORDS or (piece.endswith("s") and piece[:-1] in WORDS):
                reachable[j] = True
    return reachable[n]


def score_word_likeness(value: str) -> float:
    """Score in [0, 1]; higher means more likely a harmless human-readable value."""
    v = value.strip()
    if not v:
        return 1.0
    if _LOCALE_RE.match(v):
        return 1.0
    if _COORD_RE.match(v):
        return 0.9
    low = v.lower()
    if _DOMAIN_RE.match(low):
        return 0.9
    if _HEXISH_RE.match(low) and any(c.isdigit() for c in low) and any(c.isalpha() for c in low):
        return 0.05

    parts = [p for p in _DELIMITERS_RE.split(v) if p]
    if len(parts) >= 2:
        hits = sum(1 for p in parts if _is_wordish(p))
        fraction = hits / len(parts)
        return round(min(0.95, 0.15 + 0.8 * fraction), 4)

    if low.isalpha():
        if low in WORDS or (low.endswith("s") and low[:-1] in WORDS):
            return 0.9
        if _word_break(low):
            return 0.85
        return 0.4
    return 0.15
