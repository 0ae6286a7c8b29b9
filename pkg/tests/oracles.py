"""Exact-arithmetic instance builders shared by the risk and acceptance tests.

Everything here works on small enumerated distributions with Fraction
weights so that risk comparisons are exact.
"""

from fractions import Fraction as F
import random

from nes_lab.risk import FiniteDistribution


def rand_weights(rng: random.Random, m: int):
    raw = [rng.randint(1, 9) for _ in range(m)]
    s = sum(raw)
    return [F(r, s) for r in raw]


def onehot(c, k):
    return [F(int(i == k)) for i in range(c)]


def symmetric_fraction(c, eta):
    off = eta / (c - 1)
    return [[(1 - eta) if i == j else off for j in range(c)] for i in range(c)]


def rand_class_preserving_eta(rng, c):
    """Symmetric rate strictly below (c-1)/c, as a fraction with small denominator."""
    den = 20
    return F(rng.randint(0, ((c - 1) * den - 1) // c), den)


def separable_instance(rng, c_max=4, m_max=6):
    c = rng.randint(2, c_max)
    m = rng.randint(1, m_max)
    labels = [rng.randrange(c) for _ in range(m)]
    return c, m, labels, rand_weights(rng, m)


def rand_uniform_matrix(rng, c, den=12):
    """Random column-stochastic matrix with fraction entries."""
    cols = []
    for _ in range(c):
        cuts = sorted(rng.randint(0, den) for _ in range(c - 1))
        parts = [b - a for a, b in zip([0] + cuts, cuts + [den])]
        cols.append([F(p, den) for p in parts])
    return [[cols[j][i] for j in range(c)] for i in range(c)]


def matvec(T, p):
    c = len(p)
    return [sum(T[i][j] * p[j] for j in range(c)) for i in range(c)]


def strictly_preserving(T, p):
    """Exact check: unique clean argmax that stays the unique noisy argmax."""
    top = max(p)
    if sum(1 for v in p if v == top) != 1:
        return False
    k = p.index(top)
    q = matvec(T, p)
    return all(q[k] > q[i] for i in range(len(q)) if i != k)


def rand_posterior(rng, c, den=10):
    cuts = sorted(rng.randint(0, den) for _ in range(c - 1))
    parts = [b - a for a, b in zip([0] + cuts, cuts + [den])]
    return [F(v, den) for v in parts]


def perm_symmetric_fraction(rng, c):
    """Class-preserving matrix whose columns permute one set of distinct values."""
    while True:
        raw = rng.sample(range(1, 40), c)
        s = sum(raw)
        vals = sorted((F(r, s) for r in raw), reverse=True)
        if len(set(vals)) == c:
            break
    diag, rest = vals[0], vals[1:]
    T = [[F(0)] * c for _ in range(c)]
    for j in range(c):
        others = rest[:]
        rng.shuffle(others)
        rows = [i for i in range(c) if i != j]
        T[j][j] = diag
        for i, v in zip(rows, others):
            T[i][j] = v
    return T, vals


def finite(weights, labels, c, T):
    return FiniteDistribution(weights, [onehot(c, y) for y in labels], T)


def argmins(values):
    best = min(values)
    return {i for i, v in enumerate(values) if v == best}


def check_argmin_agreement(rng):
    """Noisy-risk and clean-risk minimisers coincide under symmetric noise."""
    c, m, labels, w = separable_instance(rng)
    eta = rand_class_preserving_eta(rng, c)
    dist = finite(w, labels, c, symmetric_fraction(c, eta))
    models = [[rng.randrange(c) for _ in range(m)] for _ in range(rng.randint(1, 8))]
    clean = [dist.clean_risk(q) for q in models]
    noisy = [dist.noisy_risk(q) for q in models]
    return argmins(clean) == argmins(noisy)


def check_bayes_dominance(rng):
    """Under class-preserving uniform noise the Bayes predictor has the least noisy risk."""
    c = rng.randint(2, 4)
    m = rng.randint(1, 5)
    while True:
        T = rand_uniform_matrix(rng, c)
        posts = [rand_posterior(rng, c) for _ in range(m)]
        if all(strictly_preserving(T, p) for p in posts):
            break
    dist = FiniteDistribution(rand_weights(rng, m), posts, T)
    bayes = dist.bayes_predictions()
    models = [[rng.randrange(c) for _ in range(m)] for _ in range(rng.randint(1, 8))]
    best = dist.noisy_risk(bayes)
    return all(best <= dist.noisy_risk(q) for q in models) and bayes == dist.bayes_predictions(noisy=True)


def rand_trajectory_with_window_zero(rng, simultaneous_minima_window, g_of):
    """Draw epoch trajectories until every g_i (i >= 2) has its first minimum at one epoch."""
    while True:
        c = rng.randint(3, 4)
        m = rng.randint(2, 5)
        labels = [rng.randrange(c) for _ in range(m)]
        w = rand_weights(rng, m)
        T, vals = perm_symmetric_fraction(rng, c)
        epochs = [[rng.randrange(c) for _ in range(m)] for _ in range(rng.randint(2, 6))]
        g = [g_of(T, labels, w, q) for q in epochs]
        win = simultaneous_minima_window([[float(gt[i]) for gt in g] for i in range(1, c)])
        if win.width == 0:
            return c, labels, w, T, epochs, g, win.t1


def exact_g(T, labels, w, pred):
    """Exact g-vector: mass of points whose prediction has each noisy rank."""
    c = len(T)
    g = [F(0)] * c
    for y, wt, k in zip(labels, w, pred):
        col = [T[i][y] for i in range(c)]
        rank = sum(1 for v in col if v > col[k])
        g[rank] += wt
    return g


def check_minima_window(rng, simultaneous_minima_window):
    c, labels, w, T, epochs, g, t = rand_trajectory_with_window_zero(rng, simultaneous_minima_window, exact_g)
    dist = finite(w, labels, c, T)
    clean_acc = [1 - dist.clean_risk(q) for q in epochs]
    noisy_acc = [1 - dist.noisy_risk(q) for q in epochs]
    first_max = lambda v: v.index(max(v)) + 1
    return first_max(clean_acc) == t and first_max(noisy_acc) == t
