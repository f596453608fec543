#!/usr/bin/env python3
"""Independent reference implementations used to freeze expected test values.

Run once; the printed numbers are pasted into the C++ unit tests. Nothing here
is imported by the build.
"""
import math

MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)


def pair_id(image_ref: str, caption: str) -> str:
    return "%016x" % fnv1a64((image_ref + "\n" + caption).encode())


def mock_score(pid: str) -> int:
    return fnv1a64(pid.encode()) % 10 + 1


def sample_random(ids, n, seed):
    ids = sorted(ids)
    rng = SplitMix64(seed)
    for i in range(n):
        j = i + rng.next() % (len(ids) - i)
        ids[i], ids[j] = ids[j], ids[i]
    return ids[:n]


if __name__ == "__main__":
    print("fnv1a64('') =", "%016x" % fnv1a64(b""))
    print("fnv1a64('\\n') =", "%016x" % fnv1a64(b"\n"))
    print("fnv1a64('a') =", "%016x" % fnv1a64(b"a"))
    print("pair_id(http://a/1.jpg, a cat on a mat) =", pair_id("http://a/1.jpg", "a cat on a mat"))
    r0 = pair_id("http://a/1.jpg", "a cat on a mat")
    print("mock_score(r0) =", mock_score(r0))
    rng = SplitMix64(0)
    print("splitmix64(0) first 3 =", ["%016x" % rng.next() for _ in range(3)])
    five = ["e", "b", "d", "a", "c"]
    print("sample_random(a..e, n=2, seed=42) =", sample_random(five, 2, 42))
    five_ids = [pair_id("img%d" % i, "caption %d" % i) for i in range(5)]
    print("five pair ids =", five_ids)
    print("sample_random(five ids, 2, 42) =", sample_random(five_ids, 2, 42))
    # closed-form Wilson (quadratic roots) for 297/500
    n, k, z = 500, 297, 1.96
    p = k / n
    a = n + z * z
    b = -(2 * n * p + z * z)
    c = n * p * p
    disc = math.sqrt(b * b - 4 * a * c)
    print("wilson 297/500 =", repr((-b - disc) / (2 * a)), repr((-b + disc) / (2 * a)))

    # cross-check for the hand t-test fixture (scipy is a third route, not the test oracle)
    try:
        from scipy import stats
        r = stats.ttest_ind([2.1, 2.0, 1.9, 2.2], [1.0, 1.1, 0.9, 1.0], alternative="greater")
        print("scipy t-test fixture: t =", repr(r.statistic), "p_one =", repr(r.pvalue))
        from scipy import special
        print("scipy betainc(2,3,0.5) =", repr(special.betainc(2, 3, 0.5)))
    except ImportError:
        pass
