"""Reference implementations written without reusing any package code."""


def naive_matrix(a, b, match=2, mismatch=-1, gap=-1):
    """Full Smith-Waterman matrix as nested lists; negative symbols never match."""
    m, n = len(a), len(b)
    H = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            s = match if a[i - 1] == b[j - 1] and a[i - 1] >= 0 else mismatch
            H[i][j] = max(0, H[i - 1][j - 1] + s, H[i - 1][j] + gap, H[i][j - 1] + gap)
    return H


def naive_score(a, b, match=2, mismatch=-1, gap=-1):
    H = naive_matrix(a, b, match, mismatch, gap)
    return max((max(row) for row in H), default=0)


def replay(ops, a_span, b_span, a, b, match=2, mismatch=-1, gap=-1):
    """Score of an op list walked over the given spans; checks the spans are consumed exactly."""
    i, j = a_span[0], b_span[0]
    total = 0
    for op in ops:
        name = getattr(op, "value", op)
        if name in ("match", "mismatch"):
            s = match if a[i] == b[j] and a[i] >= 0 else mismatch
            assert (name == "match") == (s == match)
            total += s
            i += 1
            j += 1
        elif name == "gap_b":
            total += gap
            i += 1
        else:
            total += gap
            j += 1
    assert (i, j) == (a_span[1], b_span[1])
    return total
