"""Brute-force reference implementations used as test oracles.

Everything here is plain Python over lists, written directly from the
definitions and deliberately sharing no code with the package.
"""

from __future__ import annotations

from fractions import Fraction


def mean(xs):
    xs = list(xs)
    return sum(xs) / len(xs) if xs else None


def stats(rows):
    """rows: iterable of (won, payoff, num_played). Returns a plain dict of estimates."""
    rows = list(rows)
    win = [(f, z) for w, f, z in rows if w]
    lose = [(f, z) for w, f, z in rows if not w]
    return {
        "n_win": len(win),
        "n_lose": len(lose),
        "p_win": len(win) / len(rows),
        "e_f_win": mean(f for f, _ in win),
        "e_f_lose": mean(f for f, _ in lose),
        "e_z_win": mean(z for _, z in win),
        "e_z_lose": mean(z for _, z in lose),
    }


def ni_keep(rows, c):
    """Expected net income per request when the auction is held."""
    rows = list(rows)
    return mean(f for _, f, _ in rows) - c * mean(z for _, _, z in rows)


def ni_abort(rows, c):
    """Expected net income per request when the auction is skipped: a win becomes a loss
    and the skipped auction's cost disappears."""
    lose = [(f, z) for w, f, z in rows if not w]
    return mean(f for f, _ in lose) - c * (mean(z for _, z in lose) - 1)


def keep_exact(rows, c):
    """Keep iff NI_keep >= NI_abort, in exact rational arithmetic. Needs both outcomes present."""
    q = [(w, Fraction(f), Fraction(z)) for w, f, z in rows]
    return ni_keep(q, Fraction(c)) >= ni_abort(q, Fraction(c))


def adeni(rows, c):
    return abs(ni_keep(rows, c) - ni_abort(rows, c))


def bin_index(value, boundaries):
    """Left-closed bins: value goes to the number of boundaries <= value; None is the no-bid bin."""
    if value is None:
        return len(boundaries) + 1
    return sum(1 for b in boundaries if b <= value)


def reweighted(rows, boundaries):
    """rows: (won, payoff, num_played, median_bid or None). Returns (df, dz) or None."""
    groups = {}
    for w, f, z, b in rows:
        groups.setdefault(bin_index(b, boundaries), []).append((w, f, z))
    total = 0
    parts = []
    for members in groups.values():
        win = [(f, z) for w, f, z in members if w]
        lose = [(f, z) for w, f, z in members if not w]
        if win and lose:
            total += len(members)
            parts.append((
                len(members),
                mean(f for f, _ in win) - mean(f for f, _ in lose),
                mean(z for _, z in win) - mean(z for _, z in lose),
            ))
    if not parts:
        return None
    return (
        sum(n * df for n, df, _ in parts) / total,
        sum(n * dz for n, _, dz in parts) / total,
    )


def replay_request(record, abort, mode):
    """(payoff, played auctions) for one RequestRecord under a per-position abort list."""
    played = 0
    if mode == "oracle":
        for a, skip in zip(record.auctions, abort):
            if skip:
                continue
            played += 1
            if a.counterfactual_would_win:
                return a.counterfactual_payoff, played
        return 0.0, played
    payoff = 0.0
    for a, skip in zip(record.auctions, abort):
        if a.position > record.num_played:
            break
        if skip:
            continue
        played += 1
        if a.won:
            payoff = record.payoff
    return payoff, played
