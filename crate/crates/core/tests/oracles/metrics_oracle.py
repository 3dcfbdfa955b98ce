"""Brute-force BLEU-4 and CIDEr-D for the toy corpus used by the metric tests.

Standalone: counts n-grams with plain lists and loops, shares no code with the
Rust implementation. Prints one line per item: index, sentence BLEU-4, CIDEr-D.
"""
import math

EPS = 1e-9
SIGMA = 6.0

CORPUS = [
    ("a man is playing a guitar", ["a man is playing a guitar", "someone plays the guitar"]),
    ("a dog runs in the park", ["a dog is running in a park", "the dog runs on grass", "a brown dog plays outside"]),
    ("a woman is cooking food", ["a woman cooks in the kitchen", "a lady is preparing food"]),
    ("the cat sleeps", ["a cat is sleeping on the sofa", "the cat sleeps quietly"]),
    ("people dance", ["a group of people are dancing", "people dance at a party"]),
    ("a car drives on a road", ["a red car drives down the road", "a car is driving on the highway"]),
    ("birds fly over the water", ["two birds fly over the lake", "birds are flying above water"]),
    ("xylophone quartz zebra", ["a child plays the piano", "a kid is playing music"]),
    ("a man is playing a guitar on stage", ["a man plays guitar on stage", "a musician performs on stage", "a man is playing a guitar"]),
    ("a boy throws a ball", ["a boy throws a ball to his dog", "a child is throwing a ball"]),
]


def grams(words, n):
    out = []
    for i in range(len(words) - n + 1):
        out.append(tuple(words[i:i + n]))
    return out


def count(lst, item):
    c = 0
    for x in lst:
        if x == item:
            c += 1
    return c


def bleu4(cand, refs):
    logs = []
    for n in range(1, 5):
        cg = grams(cand, n)
        if not cg:
            continue
        matched = 0
        for g in sorted(set(cg)):
            best = max(count(grams(r, n), g) for r in refs)
            matched += min(count(cg, g), best)
        p = (matched if matched > 0 else EPS) / len(cg)
        logs.append(math.log(p))
    c = len(cand)
    r = sorted((abs(len(x) - c), len(x)) for x in refs)[0][1]
    bp = math.exp(min(0.0, 1.0 - r / c))
    return bp * math.exp(sum(logs) / len(logs))


def cider_d(items):
    all_refs = [refs for _, refs in items]
    n_docs = len(all_refs)

    def df(g, n):
        d = 0
        for refs in all_refs:
            present = False
            for r in refs:
                if g in grams(r, n):
                    present = True
            if present:
                d += 1
        return d

    def vec(words, n):
        v = {}
        for g in set(grams(words, n)):
            tf = count(grams(words, n), g)
            v[g] = tf * (math.log(n_docs) - math.log(max(1, df(g, n))))
        return v

    def norm(v):
        return math.sqrt(sum(x * x for x in v.values()))

    scores = []
    for cand, refs in items:
        total = 0.0
        for n in range(1, 5):
            vc = vec(cand, n)
            per_ref = 0.0
            for r in refs:
                vr = vec(r, n)
                dot = 0.0
                for g in vc:
                    if g in vr:
                        dot += min(vc[g], vr[g]) * vr[g]
                if norm(vc) != 0 and norm(vr) != 0:
                    dot /= norm(vc) * norm(vr)
                delta = len(cand) - len(r)
                per_ref += dot * math.exp(-(delta ** 2) / (2 * SIGMA ** 2))
            total += per_ref / len(refs)
        scores.append(total / 4 * 10.0)
    return scores


def main():
    items = [(c.split(), [r.split() for r in refs]) for c, refs in CORPUS]
    ciders = cider_d(items)
    for i, ((cand, refs), cd) in enumerate(zip(items, ciders)):
        print(f"{i} {bleu4(cand, refs)!r} {cd!r}")


if __name__ == "__main__":
    main()
