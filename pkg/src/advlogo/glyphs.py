"""Shipped logo contour bitmaps.

The art is a placeholder: glyph shapes only need to be fixed and
recognisable, they are rescaled to the texture size with nearest sampling.
"""

import numpy as np

_ART = {
    "G": """
................
....########....
..############..
.#####....#####.
.####......####.
.####...........
.####...........
.####...#######.
.####...#######.
.####......####.
.####......####.
.#####....#####.
..############..
....#########...
................
................
""",
    "O": """
................
.....######.....
...##########...
..####....####..
.####......####.
.####......####.
.####......####.
.####......####.
.####......####.
.####......####.
.####......####.
..####....####..
...##########...
.....######.....
................
................
""",
    "C": """
................
.....#######....
...###########..
..#####...#####.
.####.......###.
.####...........
.####...........
.####...........
.####...........
.####...........
.####.......###.
..#####...#####.
...###########..
.....#######....
................
................
""",
    "X": """
................
.####......####.
.#####....#####.
..#####..#####..
...##########...
....########....
.....######.....
.....######.....
....########....
...##########...
..#####..#####..
.#####....#####.
.####......####.
................
................
................
""",
    "T": """
................
.##############.
.##############.
.##############.
......####......
......####......
......####......
......####......
......####......
......####......
......####......
......####......
......####......
......####......
................
................
""",
    "H": """
................
.#####....#####.
.#####....#####.
.#####....#####.
.#####....#####.
.#####....#####.
.##############.
.##############.
.##############.
.#####....#####.
.#####....#####.
.#####....#####.
.#####....#####.
.#####....#####.
................
................
""",
    "twitter": """
................
..............#.
.#.......####.#.
.##.....#######.
.###....######..
..####..######..
..############..
...###########..
.############...
..##########....
...########.....
....######......
..#######.......
.######.........
................
................
""",
}


def _parse(art: str) -> np.ndarray:
    rows = [r for r in art.strip("\n").splitlines()]
    return np.array([[c == "#" for c in r] for r in rows], dtype=bool)


def _raindrop(n=64) -> np.ndarray:
    # circle below, tapering to a point at the top
    yy, xx = np.mgrid[0:n, 0:n]
    x = (xx + 0.5) / n - 0.5
    y = (yy + 0.5) / n
    cy, r = 0.62, 0.3
    circle = x ** 2 + (y - cy) ** 2 <= r ** 2
    tip = 0.06
    frac = np.clip((y - tip) / (cy - tip), 0.0, 1.0)
    cone = (y >= tip) & (y <= cy) & (np.abs(x) <= r * frac)
    return circle | cone


GLYPHS = {name: _parse(art) for name, art in _ART.items()}
GLYPHS["raindrop"] = _raindrop()
GLYPHS["rect"] = np.ones((16, 16), dtype=bool)

NAMES = ("G", "O", "C", "X", "T", "H", "raindrop", "twitter", "rect")
