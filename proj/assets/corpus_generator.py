# Copyright (c) 2026, the deskt5 authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates corpus.txt: synthetic English-like prose from a closed
vocabulary and a seeded template grammar. No external text is used, so the
bundled corpus carries no licensing constraints. Deterministic for a seed."""

import random

SUBJECTS = [
    "the river", "a heron", "the miller", "the old bridge", "a traveler",
    "the orchard", "the ferryman", "a gray cat", "the lighthouse", "the tide",
    "a swallow", "the baker", "the north wind", "a fisherman", "the valley",
    "the clock tower", "a wandering dog", "the harbor", "the school teacher",
    "a quiet storm", "the market square", "the shepherd", "a lantern",
    "the carpenter", "the morning fog",
]

VERBS = [
    "watches", "crosses", "remembers", "follows", "reaches", "carries",
    "guards", "passes", "circles", "greets", "measures", "wakes", "shelters",
    "answers", "shadows", "warms", "steadies", "gathers", "outlasts",
    "mirrors",
]

OBJECTS = [
    "the narrow lane", "the far shore", "an empty field", "the stone wall",
    "the last ferry", "a row of elms", "the tin roof", "the low clouds",
    "the salt marsh", "an open gate", "the winter road", "the wooden pier",
    "a line of geese", "the church bell", "the tidal flats", "the mill pond",
    "a distant sail", "the chalk cliffs", "the first frost", "the long meadow",
]

TAILS = [
    "before the rain begins", "while the town still sleeps",
    "as the light turns gold", "until the bell falls silent",
    "when the fog lifts at noon", "after the market closes",
    "though nobody keeps count", "as the season slowly turns",
    "while the gulls argue overhead", "long after the lamps go out",
    "before the frost can settle", "as the current shifts east",
]

OPENERS = [
    "In the early hours,", "Past the old sluice,", "Every spring,",
    "By long habit,", "Against the wind,", "Most evenings,",
    "Near the boundary stone,", "Without any hurry,",
]


def sentence(rng: random.Random) -> str:
    parts = []
    if rng.random() < 0.3:
        parts.append(rng.choice(OPENERS))
    parts.append(rng.choice(SUBJECTS))
    parts.append(rng.choice(VERBS))
    parts.append(rng.choice(OBJECTS))
    if rng.random() < 0.6:
        parts.append(rng.choice(TAILS))
    text = " ".join(parts) + "."
    return text[0].upper() + text[1:] if not text[0].isupper() else text


def main() -> None:
    rng = random.Random(20260214)
    paragraphs = []
    for _ in range(420):
        n = rng.randint(3, 6)
        paragraphs.append(" ".join(sentence(rng) for _ in range(n)))
    with open("corpus.txt", "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(paragraphs))
        fh.write("\n")


if __name__ == "__main__":
    main()
