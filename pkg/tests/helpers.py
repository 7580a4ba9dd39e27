"""Independent oracles shared by unit and acceptance tests."""

from collections import deque

import numpy as np


def border_fill_oracle(occ: np.ndarray, min_blob_cells: int) -> np.ndarray:
    """Reference refine_mask: border-BFS hole fill, then small-blob removal.

    Deliberately written with explicit queues (no scipy) so it shares no code
    with the implementation under test.
    """
    occ = occ.astype(bool)
    rows, cols = occ.shape
    reach = np.zeros_like(occ)
    q: deque = deque()
    for r in range(rows):
        for c in (0, cols - 1):
            if not occ[r, c] and not reach[r, c]:
                reach[r, c] = True
                q.append((r, c))
    for c in range(cols):
        for r in (0, rows - 1):
            if not occ[r, c] and not reach[r, c]:
                reach[r, c] = True
                q.append((r, c))
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols and not occ[rr, cc] and not reach[rr, cc]:
                reach[rr, cc] = True
                q.append((rr, cc))
    filled = occ | ~reach

    out = np.zeros_like(filled)
    seen = np.zeros_like(filled)
    for r in range(rows):
        for c in range(cols):
            if filled[r, c] and not seen[r, c]:
                comp = [(r, c)]
                seen[r, c] = True
                q = deque([(r, c)])
                while q:
                    y, x = q.popleft()
                    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dr, x + dc
                        if 0 <= yy < rows and 0 <= xx < cols and filled[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            comp.append((yy, xx))
                            q.append((yy, xx))
                if len(comp) >= min_blob_cells:
                    for y, x in comp:
                        out[y, x] = True
    return out
