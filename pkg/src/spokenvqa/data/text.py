"""Rewrite instruction text into speakable form before pseudo-speech synthesis.

Rule table (applied in order):

====================  ==================================
input                 spoken form
====================  ==================================
``\\frac{a}{b}``       ``a over b``
``\\sqrt{x}``          ``square root of x``
``x^2`` / ``x^{2}``    ``x squared``
``x^3``                ``x cubed``
``x^n`` / ``x^{n}``    ``x to the power of n``
``x_i`` / ``x_{i}``    ``x sub i``
``\\times``, ``\\cdot``  ``times``
``\\div``              ``divided by``
``\\pm``               ``plus or minus``
``\\le(q)``, ``\\ge(q)``, ``\\neq``  ``less than or equal to`` ...
``\\alpha`` ...         Greek letter name
``\\left``, ``\\right``  dropped
``$``                  dropped (math delimiter)
``%``                  ``percent``
``&``                  ``and``
``+``, ``=``           ``plus``, ``equals``
``<``, ``>``           ``less than``, ``greater than``
``≤ ≥ ≠ ≈ ± × ÷ √ ° π ∞``  word forms
``-`` or ``−`` between numbers/spaced  ``minus``; otherwise a space
``/`` between numbers   ``over``; otherwise a space
``1,000``              ``1000``
``3.14``               ``3 point 14``
``; :``                ``,``
``…``                  ``.``
quotes, brackets       dropped
====================  ==================================

Anything outside letters, digits, whitespace, ``. , ? !`` and in-word
apostrophes is dropped and counted.  Runs of whitespace and punctuation are
collapsed, so the transform is idempotent.
"""

from __future__ import annotations

import logging
import re
import unicodedata

log = logging.getLogger(__name__)

_GREEK = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
    "lambda", "mu", "nu", "xi", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
]

_LATEX_WORDS = {
    "times": " times ", "cdot": " times ", "div": " divided by ", "pm": " plus or minus ",
    "mp": " minus or plus ", "leq": " less than or equal to ", "le": " less than or equal to ",
    "geq": " greater than or equal to ", "ge": " greater than or equal to ",
    "neq": " not equal to ", "ne": " not equal to ", "approx": " approximately ",
    "infty": " infinity ", "degree": " degrees ", "circ": " degrees ", "sum": " sum of ",
    "int": " integral of ", "log": " log ", "ln": " natural log of ", "sin": " sine ",
    "cos": " cosine ", "tan": " tangent ", "rightarrow": " to ", "to": " to ",
    "left": " ", "right": " ", "quad": " ", "text": " ", "mathrm": " ", "mathbf": " ",
}
_LATEX_WORDS.update({g: f" {g} " for g in _GREEK})

_SYMBOLS = {
    "%": " percent ", "&": " and ", "+": " plus ", "=": " equals ", "<": " less than ",
    ">": " greater than ", "≤": " less than or equal to ", "≥": " greater than or equal to ",
    "≠": " not equal to ", "≈": " approximately ", "±": " plus or minus ", "×": " times ",
    "÷": " divided by ", "√": " square root of ", "°": " degrees ", "π": " pi ", "∞": " infinity ",
    "@": " at ", "#": " number ", "→": " to ",
    ";": ",", ":": ",", "…": ".", "\u2019": "'", "\u2018": "'",
}
# dropped silently: they carry structure, not speech
_SILENT = set("$\"“”()[]{}`")

_NUM = r"[0-9]"
_BRACED_OR_TOKEN = r"(\{[^{}]*\}|[A-Za-z0-9]+)"


class NormalizedText(str):
    """A ``str`` that also records how many unknown symbols were dropped."""

    dropped: int = 0

    def __new__(cls, value: str, dropped: int = 0):
        obj = super().__new__(cls, value)
        obj.dropped = dropped
        return obj


def _unbrace(s: str) -> str:
    return s[1:-1] if s.startswith("{") and s.endswith("}") else s


def _power(m: re.Match) -> str:
    exp = _unbrace(m.group(1)).strip()
    if exp == "2":
        return " squared "
    if exp == "3":
        return " cubed "
    return f" to the power of {exp} "


def _latex(text: str) -> str:
    # innermost-first so nested fractions resolve
    frac = re.compile(r"\\[dt]?frac\s*\{([^{}]*)\}\s*\{([^{}]*)\}")
    sqrt = re.compile(r"\\sqrt\s*\{([^{}]*)\}")
    while True:
        new = frac.sub(r" \1 over \2 ", text)
        new = sqrt.sub(r" square root of \1 ", new)
        if new == text:
            break
        text = new
    text = re.sub(r"\^\s*" + _BRACED_OR_TOKEN, _power, text)
    text = re.sub(r"_\s*" + _BRACED_OR_TOKEN, lambda m: f" sub {_unbrace(m.group(1))} ", text)

    def word(m: re.Match) -> str:
        name = m.group(1)
        return _LATEX_WORDS.get(name, f" {name} ")

    return re.sub(r"\\([A-Za-z]+)", word, text)


def normalize_text(raw: str) -> NormalizedText:
    """Turn ``raw`` into speakable ASCII; see the module docstring for the rules."""
    text = unicodedata.normalize("NFKC", raw)
    text = _latex(text)
    text = text.replace("\u2212", "-").replace("\u2013", "-").replace("\u2014", " - ")
    text = re.sub(rf"(?<={_NUM}),(?={_NUM}{{3}})", "", text)
    text = re.sub(rf"(?<={_NUM})\.(?={_NUM})", " point ", text)
    text = re.sub(rf"(?<={_NUM})\s*/\s*(?={_NUM})", " over ", text)
    text = re.sub(rf"(?:(?<={_NUM})\s*-\s*(?={_NUM})|(?<=\s)-(?=\s))", " minus ", text)

    dropped = 0
    out = []
    for ch in text:
        ch = _SYMBOLS.get(ch, ch)
        if len(ch) > 1 or ch.isascii() and (ch.isalnum() or ch.isspace() or ch in ".,?!'"):
            out.append(ch)
        elif ch in _SILENT or ch in "-/\\^_|*~":
            out.append(" ")
        elif ch.isalpha() and _ascii_fold(ch):
            out.append(_ascii_fold(ch))
        else:
            dropped += 1
            out.append(" ")
    text = "".join(out)

    text = re.sub(r"(?<![A-Za-z])'|'(?![A-Za-z])", " ", text)
    text = re.sub(r"\s+", " ", text)
    text = re.sub(r"\s+([.,?!])", r"\1", text)
    # collapse punctuation runs, keeping the strongest mark
    text = re.sub(r"[.,?!]{2,}", lambda m: _strongest(m.group(0)), text)
    text = re.sub(r"([.,?!])(?=[A-Za-z0-9'])", r"\1 ", text)
    text = re.sub(r"^[\s.,?!]+", "", text).strip()
    if dropped:
        log.warning("normalize_text dropped %d unknown symbol(s)", dropped)
    return NormalizedText(text, dropped)


def _ascii_fold(ch: str) -> str:
    return "".join(c for c in unicodedata.normalize("NFKD", ch) if c.isascii() and c.isalpha())


def _strongest(run: str) -> str:
    for mark in "?!.":
        if mark in run:
            return mark
    return ","
