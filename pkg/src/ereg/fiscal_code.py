"""Italian personal tax code ("codice fiscale") decoding.

The 16-character code embeds birth date, gender, and the cadastral code of
the birth place; this module recovers those fields for derivation rules.
Only the standard form is handled (no omocodia digit substitutions).

Two-digit years are disambiguated with a fixed pivot so decoding never
depends on the wall clock: YY >= PIVOT_YEAR reads as 19YY, else 20YY.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date

from .errors import TypeMismatch

PIVOT_YEAR = 30

MONTH_CODES = "ABCDEHLMPRST"  # index 0 = January

_SHAPE = re.compile(r"^[A-Z]{6}\d{2}[ABCDEHLMPRST]\d{2}[A-Z]\d{3}[A-Z]$")

# Check-character tables from the official algorithm: every character of the
# first 15 maps to an integer depending on its (1-indexed) position parity.
_ODD = {
    "0": 1, "1": 0, "2": 5, "3": 7, "4": 9, "5": 13, "6": 15, "7": 17,
    "8": 19, "9": 21,
    "A": 1, "B": 0, "C": 5, "D": 7, "E": 9, "F": 13, "G": 15, "H": 17,
    "I": 19, "J": 21, "K": 2, "L": 4, "M": 18, "N": 20, "O": 11, "P": 3,
    "Q": 6, "R": 8, "S": 12, "T": 14, "U": 16, "V": 10, "W": 22, "X": 25,
    "Y": 24, "Z": 23,
}
_EVEN = {c: i for i, c in enumerate("0123456789")}
_EVEN.update({c: i for i, c in enumerate("ABCDEFGHIJKLMNOPQRSTUVWXYZ")})


def check_character(first15: str) -> str:
    total = 0
    for pos, ch in enumerate(first15, start=1):
        total += _ODD[ch] if pos % 2 == 1 else _EVEN[ch]
    return chr(ord("A") + total % 26)


@dataclass(frozen=True)
class FiscalCodeFacts:
    birth_date: date
    birth_place_code: str
    gender: str  # "M" | "F"


def decode(code: str) -> FiscalCodeFacts:
    """Decode a fiscal code; raises TypeMismatch on malformed or bad checksum."""
    if not isinstance(code, str):
        raise TypeMismatch("fiscal code must be text")
    normal = code.strip().upper()
    if len(normal) != 16 or not _SHAPE.match(normal):
        raise TypeMismatch(f"malformed fiscal code: {code!r}")
    if check_character(normal[:15]) != normal[15]:
        raise TypeMismatch(f"fiscal code checksum mismatch: {code!r}")

    yy = int(normal[6:8])
    month = MONTH_CODES.index(normal[8]) + 1
    day_raw = int(normal[9:11])
    gender = "F" if day_raw > 40 else "M"
    day = day_raw - 40 if day_raw > 40 else day_raw
    year = 1900 + yy if yy >= PIVOT_YEAR else 2000 + yy
    try:
        born = date(year, month, day)
    except ValueError:
        raise TypeMismatch(f"fiscal code encodes impossible date: {code!r}") from None
    return FiscalCodeFacts(birth_date=born, birth_place_code=normal[11:15], gender=gender)


def extract_birth_date(code: str) -> date:
    return decode(code).birth_date


def extract_birth_place_code(code: str) -> str:
    return decode(code).birth_place_code


def extract_gender(code: str) -> str:
    return decode(code).gender
