"""
Whitespace-separated block format for point sets.

One point per line, coordinates separated by a single space, blocks
(components, clusters, segments) separated by one blank line. Floats are
written with `repr` precision so files are reproducible byte for byte.
"""

from typing import Iterable, List

import numpy as np


def format_blocks(blocks: Iterable[np.ndarray]) -> str:
    chunks = []
    for block in blocks:
        block = np.atleast_2d(np.asarray(block, dtype=float))
        if block.size == 0:
            continue
        chunks.append("\n".join(" ".join(repr(float(v)) for v in row) for row in block))
    return "\n\n".join(chunks) + ("\n" if chunks else "")


def parse_blocks(text: str) -> List[np.ndarray]:
    blocks = []
    for chunk in text.strip().split("\n\n"):
        rows = [list(map(float, line.split())) for line in chunk.splitlines() if line.strip()]
        if rows:
            blocks.append(np.array(rows))
    return blocks
