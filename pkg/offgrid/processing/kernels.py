"""
Compute kernels behind the workloads: game-tree search, dense linear solve,
MD5 detection rounds and Machin's formula for pi.
"""
import hashlib

import numpy as np

from offgrid import config
from offgrid.processing.splitmix import GAMMA, MASK64, mix64, uniform_block
from offgrid.utils.logger_setup import log_debug

log_debug("processing.kernels module initialized.")

# Work units charged per searched game position.
GAME_NODE_UNITS = 64
_INFINITY = 1 << 62


# --- Game tree ---

def child_key(key, move):
    return mix64(key ^ (((move + 1) * GAMMA) & MASK64))


def leaf_value(key):
    """Evaluation in [-1000, 1000] for the side to move."""
    return mix64(key) % 2001 - 1000


class NegamaxSearch:
    """Negamax with alpha-beta pruning over the synthetic tree rooted at a position key."""

    def __init__(self, branching=config.GAME_BRANCHING):
        self.branching = branching
        self.nodes = 0

    def value(self, key, depth, alpha=-_INFINITY, beta=_INFINITY):
        self.nodes += 1
        if depth == 0:
            return leaf_value(key)
        best = -_INFINITY
        for move in range(self.branching):
            score = -self.value(child_key(key, move), depth - 1, -beta, -alpha)
            if score > best:
                best = score
            if best > alpha:
                alpha = best
            if alpha >= beta:
                break
        return best

    def best_move(self, key, depth):
        """(score, move) of the first best move at the root."""
        self.nodes += 1
        alpha, best_move = -_INFINITY, 0
        for move in range(self.branching):
            score = -self.value(child_key(key, move), depth - 1, -_INFINITY, -alpha)
            if score > alpha:
                alpha, best_move = score, move
        return alpha, best_move


def negamax_plain(key, depth, branching=config.GAME_BRANCHING):
    """Exhaustive negamax; the pruned search must agree with it."""
    if depth == 0:
        return leaf_value(key)
    return max(-negamax_plain(child_key(key, m), depth - 1, branching) for m in range(branching))


# --- Linear solve ---

def linsolve_flops(n, k=1):
    return k * (2 * n ** 3 / 3 + 2 * n ** 2)


def make_system(seed, n):
    """Diagonally dominant n x n system (A, b) drawn from the seed."""
    values = uniform_block(seed, n * n + n) * 2.0 - 1.0
    a = values[:n * n].reshape(n, n)
    a += np.eye(n) * n
    return a, values[n * n:].copy()


def gauss_solve(a, b, tol=1.0e-12):
    """Gaussian elimination with partial pivoting; inputs are not modified."""
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = len(b)
    for k in range(n - 1):
        p = int(np.argmax(np.abs(a[k:, k]))) + k
        if abs(a[p, k]) < tol:
            raise ValueError('Matrix is singular')
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        lam = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= np.outer(lam, a[k, k:])
        b[k + 1:] -= lam * b[k]
    if abs(a[n - 1, n - 1]) < tol:
        raise ValueError('Matrix is singular')
    x = np.zeros(n)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - np.dot(a[k, k + 1:], x[k + 1:])) / a[k, k]
    return x


def residual_norm(a, x, b):
    return float(np.max(np.abs(a @ x - b)))


# --- Blob detection ---

def detection_digest(image, rounds):
    """R chained MD5 rounds over the image; each round hashes the whole image."""
    digest = b''
    for _ in range(rounds):
        h = hashlib.md5(digest)
        h.update(image)
        digest = h.digest()
    return digest


# --- Pi ---

def arctan_inv(x, unity):
    """arctan(1/x) scaled by `unity`, by the alternating integer series."""
    total = term = unity // x
    x_squared = x * x
    n = 1
    sign = -1
    while term:
        term //= x_squared
        n += 2
        total += sign * (term // n)
        sign = -sign
    return total


def machin_pi(digits, guard=10):
    """pi truncated to `digits` decimals, as a string '3.14159...'."""
    unity = 10 ** (digits + guard)
    pi = 4 * (4 * arctan_inv(5, unity) - arctan_inv(239, unity))
    text = str(pi // 10 ** guard)
    return text[0] + '.' + text[1:]


def machin_units(digits):
    return digits * digits // 8
