"""
Seeded random streams and alias-method sampling.

Every random draw in the pipeline comes from a generator built by
``seeded_rng(seed, *keys)``, so a stage can derive independent, reproducible
streams (per walk, per epoch, per split) from the one global seed.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def seeded_rng(seed, *keys):
    entropy = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


# Vose alias table: O(1) draws from a fixed discrete distribution
class AliasTable:

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError('alias table needs a non-empty 1-d distribution')
        if np.any(probs < 0) or probs.sum() <= 0:
            raise ValueError('alias table needs non-negative weights with a positive sum')

        size = probs.size
        scaled = probs / probs.sum() * size
        accept = np.ones(size)
        alias = np.arange(size)

        small = [i for i in range(size) if scaled[i] < 1.0]
        large = [i for i in range(size) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            accept[s] = scaled[s]
            alias[s] = l
            scaled[l] = scaled[l] + scaled[s] - 1.0
            if scaled[l] < 1.0:
                small.append(l)
            else:
                large.append(l)

        # whatever is left over is 1 up to rounding
        for i in small + large:
            accept[i] = 1.0

        self.accept = accept
        self.alias = alias
        self.probs = probs / probs.sum()

    @classmethod
    def from_weights(cls, weights, power=1.0):
        weights = np.asarray(weights, dtype=np.float64)
        return cls(np.power(weights, power))

    def __len__(self):
        return self.accept.size

    def draw(self, rng, size=None):
        column = rng.integers(0, self.accept.size, size=size)
        coin = rng.random(size=size)
        return np.where(coin < self.accept[column], column, self.alias[column])

    # Same draw driven by two uniforms, for callers that pre-draw their randomness
    def pick(self, u_column, u_coin):
        column = min(int(u_column * self.accept.size), self.accept.size - 1)
        return column if u_coin < self.accept[column] else int(self.alias[column])


# Per-class shuffled split keeping every class of size >= 2 on both sides
def stratified_split(labels, train_ratio, rng):
    labels = np.asarray(labels)
    train, test = [], []
    for label in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == label))
        if len(members) == 1:
            train.extend(members)
            continue
        n_train = int(np.floor(train_ratio * len(members) + 0.5))
        n_train = min(max(n_train, 1), len(members) - 1)
        train.extend(members[:n_train])
        test.extend(members[n_train:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))
