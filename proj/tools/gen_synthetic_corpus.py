#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Writes the deterministic synthetic multilingual fixtures under data/synthetic/.

Texts are pseudo-words drawn from per-language syllable inventories, so they
exercise the tokenizer on realistic byte distributions (including non-ASCII
letters) without shipping real corpus data. Each per-dataset file contains a
few exact duplicates and PII-like strings so dedup and scrubbing have work.

Usage: gen_synthetic_corpus.py [out_dir]
"""

import json
import random
import sys
from pathlib import Path

SEED = 20240901

SYLLABLES = {
    "fin": ["ta", "lo", "ssa", "kki", "nen", "ja", "va", "koi", "mä", "tä", "ka", "hen", "sii", "nä",
            "puu", "ri", "ään", "sä", "ly", "ö", "ke", "mi", "sta", "lla", "ik", "ku", "vi", "en"],
    "eng": ["the", "and", "ing", "er", "ti", "on", "re", "at", "st", "en", "com", "pro", "ver", "ly",
            "ed", "al", "in", "ex", "ple", "ment", "ca", "ou", "ght", "sh"],
    "swe": ["och", "att", "för", "de", "en", "ska", "lig", "het", "på", "så", "kan", "ä", "rå", "sk",
            "ning", "var", "bo", "gå", "tt", "ö", "mer", "lan", "de", "sju"],
    "sme": ["ge", "ah", "čá", "šu", "ŋŋ", "đa", "ŧa", "li", "de", "ii", "vá", "gi", "oa", "ža", "ál",
            "mu", "sá", "bm", "ot", "ea", "ru", "hk"],
    "lat": ["us", "um", "ae", "is", "que", "ti", "or", "em", "ius", "am", "pro", "con", "ver", "tas",
            "ni", "ar", "ex", "in", "ro", "ma"],
}

CODE_SNIPPETS = [
    "def {f}({a}, {b}):\n    return {a} + {b}\n",
    "for {a} in range({n}):\n    {f}({a})\n",
    "class {F}:\n    def __init__(self, {a}):\n        self.{a} = {a}\n",
    "if {a} > {n}:\n    {b} = {f}({a})\nelse:\n    {b} = None\n",
    "{a} = [{f}(x) for x in {b} if x % {n} == 0]\n",
    "import {f}\n\n{a} = {f}.load(\"{b}.json\")\n",
]

# (file stem, lang, source, docs, mean words, edu-score center or None)
DATASETS = [
    ("fin_web", "fin", "HPLT 2.0", 420, 110, 2.1),
    ("fin_news", "fin", "Yle news", 160, 90, None),
    ("eng_edu", "eng", "FineWeb-Edu fortified", 260, 120, 3.2),
    ("eng_wiki", "eng", "Wikipedia", 120, 100, None),
    ("swe_web", "swe", "HPLT 2.0", 220, 100, 1.9),
    ("sme_web", "sme", "saami-web", 60, 80, None),
    ("lat_text", "lat", "Latin Wikipedia", 40, 80, None),
    ("code", "code", "SmolLM", 120, 60, None),
]


def word(rng, lang):
    syl = SYLLABLES[lang]
    return "".join(rng.choice(syl) for _ in range(rng.randint(1, 4)))


def sentence(rng, lang):
    words = [word(rng, lang) for _ in range(rng.randint(4, 14))]
    words[0] = words[0].capitalize()
    return " ".join(words) + rng.choice([".", ".", ".", "?", "!"])


def prose(rng, lang, mean_words):
    target = max(8, int(rng.gauss(mean_words, mean_words / 3)))
    parts, count = [], 0
    while count < target:
        s = sentence(rng, lang)
        parts.append(s)
        count += len(s.split())
        if rng.random() < 0.15:
            parts.append("\n\n")
    text = " ".join(parts).replace(" \n\n ", "\n\n")
    if rng.random() < 0.06:
        user = word(rng, "eng")
        text += f" Contact {user}@example.org or +358 40 {rng.randint(100, 999)} {rng.randint(1000, 9999)}."
    if rng.random() < 0.03:
        text += f" Server 10.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(1, 254)} responded."
    return text.strip()


def code_text(rng, mean_words):
    out, words = [], 0
    while words < mean_words:
        snippet = rng.choice(CODE_SNIPPETS).format(
            f=word(rng, "eng"), F=word(rng, "eng").capitalize(), a=word(rng, "eng"), b=word(rng, "eng"),
            n=rng.randint(2, 64))
        out.append(snippet)
        words += len(snippet.split())
    return "\n".join(out)


def make_docs(rng, stem, lang, source, n, mean_words, edu):
    docs = []
    for i in range(n):
        text = code_text(rng, mean_words) if lang == "code" else prose(rng, lang, mean_words)
        doc = {"id": f"{stem}-{i:05d}", "lang": lang, "source": source, "text": text}
        if edu is not None:
            doc["edu_score"] = round(min(5.0, max(0.0, rng.gauss(edu, 0.9))), 2)
        docs.append(doc)
    # exact duplicates (some with trailing-whitespace or CRLF variation)
    for j in range(max(1, n // 25)):
        src = rng.choice(docs[:n])
        dup = dict(src, id=f"{stem}-dup{j:03d}")
        if j % 3 == 1:
            dup["text"] = src["text"] + "  \n"
        elif j % 3 == 2:
            dup["text"] = src["text"].replace("\n", "\r\n")
        docs.append(dup)
    rng.shuffle(docs)
    return docs


def write_jsonl(path, docs):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for d in docs:
            f.write(json.dumps(d, ensure_ascii=False) + "\n")


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "synthetic"
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    everything = []
    for stem, lang, source, n, mean_words, edu in DATASETS:
        docs = make_docs(rng, stem, lang, source, n, mean_words, edu)
        write_jsonl(out / f"{stem}.jsonl", docs)
        everything.extend(docs)
    write_jsonl(out / "corpus.jsonl", everything)


if __name__ == "__main__":
    main()
