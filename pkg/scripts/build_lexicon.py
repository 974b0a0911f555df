"""Assemble the embedded IPA pronunciation lexicon from CMUdict.

Run once at build time; the output is committed as package data so the
runtime has no dependency on the ``cmudict`` package.

    pip install cmudict
    python scripts/build_lexicon.py src/nefix/data/lexicon.tsv.gz
"""

from __future__ import annotations

import gzip
import sys

import cmudict

# Diphthongs are split into two segments; affricates stay single segments.
ARPABET_TO_IPA = {
    "AA": ["ɑ"], "AE": ["æ"], "AO": ["ɔ"], "AW": ["a", "ʊ"], "AY": ["a", "ɪ"],
    "EH": ["ɛ"], "EY": ["e", "ɪ"], "IH": ["ɪ"], "IY": ["i"], "OW": ["o", "ʊ"],
    "OY": ["ɔ", "ɪ"], "UH": ["ʊ"], "UW": ["u"],
    "B": ["b"], "CH": ["tʃ"], "D": ["d"], "DH": ["ð"], "F": ["f"], "G": ["ɡ"],
    "HH": ["h"], "JH": ["dʒ"], "K": ["k"], "L": ["l"], "M": ["m"], "N": ["n"],
    "NG": ["ŋ"], "P": ["p"], "R": ["ɹ"], "S": ["s"], "SH": ["ʃ"], "T": ["t"],
    "TH": ["θ"], "V": ["v"], "W": ["w"], "Y": ["j"], "Z": ["z"], "ZH": ["ʒ"],
}


def convert(phones: list[str]) -> list[str]:
    out: list[str] = []
    for phone in phones:
        base, stress = phone.rstrip("012"), phone[len(phone.rstrip("012")):]
        # stress is dropped, but it still decides the reduced vowel quality
        if base == "AH":
            out.append("ə" if stress == "0" else "ʌ")
        elif base == "ER":
            out.append("ɚ" if stress == "0" else "ɝ")
        else:
            out.extend(ARPABET_TO_IPA[base])
    return out


def main(out_path: str) -> None:
    seen: set[str] = set()
    lines = []
    for word, phones in cmudict.entries():
        # first pronunciation wins; variants like "read(2)" are skipped
        if word in seen:
            continue
        seen.add(word)
        lines.append(f"{word}\t{' '.join(convert(phones))}\n")
    with gzip.GzipFile(out_path, "wb", mtime=0) as fh:
        fh.write("".join(lines).encode("utf-8"))
    print(f"wrote {len(lines)} entries to {out_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/nefix/data/lexicon.tsv.gz")
