"""Regenerate tle_mutations.json: 1,000 single-character perturbations of iss.tle.

Half the substitutions keep the modulo-10 checksum weight of the replaced
character (letters, blanks, '.', '+' weigh 0; '-' and '1' weigh 1), so only
the fixed-column field checks can catch them.

    python tests/fixtures/make_tle_mutations.py
"""

import json
import random
import string
from pathlib import Path

HERE = Path(__file__).parent
ZERO_WEIGHT = string.ascii_letters + " .+"
ALPHABET = string.ascii_letters + string.digits + " .+-"
# 1-based line-1 columns the parser carries as opaque metadata: classification, designator
IGNORED_LINE1 = {8, *range(10, 18)}


def weight(c: str) -> int:
    return int(c) if c.isdigit() else 1 if c == "-" else 0


def main(n: int = 1000, seed: int = 20150415) -> None:
    rng = random.Random(seed)
    lines = (HERE / "iss.tle").read_text().splitlines()
    cases = []
    while len(cases) < n:
        li = rng.randrange(3)
        col = rng.randrange(len(lines[li]))
        old = lines[li][col]
        if rng.random() < 0.5:
            pool = [c for c in ALPHABET if weight(c) == weight(old)] if li else ZERO_WEIGHT
        else:
            pool = ALPHABET
        choices = [c for c in pool if c != old] or [c for c in ALPHABET if c != old]
        new = rng.choice(choices)
        mutated = list(lines)
        mutated[li] = lines[li][:col] + new + lines[li][col + 1:]
        exempt = li == 0 or (li == 1 and col + 1 in IGNORED_LINE1)
        cases.append({"line": li, "column": col + 1, "old": old, "new": new,
                      "exempt": exempt, "record": mutated})
    (HERE / "tle_mutations.json").write_text(json.dumps(cases, indent=0) + "\n")


if __name__ == "__main__":
    main()
