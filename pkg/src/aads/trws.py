"""Sequential tree-reweighted message passing (TRW-S) for pairwise MRFs.

Nodes are processed in index order (forward) and then in reverse.  A node's
update only depends on neighbors that precede it in the current direction, so
nodes are batched into dependency levels ("wavefronts"); inside a level the
updates are independent and the arithmetic is identical to a strictly
sequential sweep.  On a row-major grid the levels are the anti-diagonals.

Edge weights come from a decomposition of the graph into monotonic chains:
every node ``s`` belongs to ``n_s`` chains and receives ``gamma_s = 1/n_s``.
The lower bound is the sum over chains of the exact chain minimum of the
current reparametrization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class MRF:
    """Pairwise energy ``sum_s unary[s, x_s] + sum_e pairwise[e, x_a, x_b]``.

    ``edges[e] = (a, b)`` with ``a < b``; ``pairwise[e]`` is indexed
    ``[label_a, label_b]``.  Unary entries may be ``+inf``.
    """

    unary: np.ndarray
    edges: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=float)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.pairwise = np.asarray(self.pairwise, dtype=float).reshape(len(self.edges), *([self.n_labels] * 2))
        if np.any(self.edges[:, 0] >= self.edges[:, 1]):
            raise ValueError("edges must be stored as (a, b) with a < b")
        if np.any(~np.isfinite(self.unary).any(axis=1)):
            raise ValueError("every node needs at least one finite unary cost")

    @property
    def n_nodes(self) -> int:
        return self.unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.unary.shape[1]

    def energy(self, labels) -> float:
        labels = np.asarray(labels)
        e = self.unary[np.arange(self.n_nodes), labels].sum()
        if len(self.edges):
            a, b = self.edges.T
            e += self.pairwise[np.arange(len(self.edges)), labels[a], labels[b]].sum()
        return float(e)


@dataclass
class TRWSResult:
    labels: np.ndarray
    energy: float
    lower_bound: float
    bounds: list
    iterations: int


def _levels(n: int, lower: np.ndarray, higher: np.ndarray) -> np.ndarray:
    """Level of each node: 1 + max level over ``lower`` neighbors (index order)."""
    level = np.zeros(n, dtype=np.int64)
    order = np.argsort(higher, kind="stable")
    lo, hi = lower[order], higher[order]
    # Edges sorted by their later endpoint; a single pass in node order suffices.
    starts = np.searchsorted(hi, np.arange(n + 1))
    for s in range(n):
        seg = lo[starts[s] : starts[s + 1]]
        if len(seg):
            level[s] = level[seg].max() + 1
    return level


def _chains(n: int, edges: np.ndarray):
    """Greedy decomposition into monotonic chains.

    Returns a list of node-index arrays (in increasing order) and, per chain,
    the matching edge indices, plus the chain multiplicity of every node.
    """
    in_edges = [[] for _ in range(n)]
    out_edges = [[] for _ in range(n)]
    for e, (a, b) in enumerate(edges):
        out_edges[a].append(e)
        in_edges[b].append(e)
    chain_of_edge = np.full(len(edges), -1, dtype=np.int64)
    chains_nodes, chains_edges = [], []
    for s in range(n):
        incoming = [chain_of_edge[e] for e in in_edges[s]]
        for k, e in enumerate(out_edges[s]):
            if k < len(incoming):
                c = incoming[k]
            else:
                c = len(chains_nodes)
                chains_nodes.append([s])
                chains_edges.append([])
            chain_of_edge[e] = c
            chains_nodes[c].append(int(edges[e, 1]))
            chains_edges[c].append(e)
    mult = np.array([max(len(in_edges[s]), len(out_edges[s]), 1) for s in range(n)], dtype=float)
    isolated = np.array([not in_edges[s] and not out_edges[s] for s in range(n)])
    return chains_nodes, chains_edges, mult, isolated


class TRWS:
    """Reusable solver state for one :class:`MRF`.  Not thread-safe mid-run."""

    def __init__(self, mrf: MRF):
        self.mrf = mrf
        n, m = mrf.n_nodes, len(mrf.edges)
        a, b = (mrf.edges[:, 0], mrf.edges[:, 1]) if m else (np.zeros(0, int), np.zeros(0, int))
        self.a, self.b = a, b
        cn, ce, mult, isolated = _chains(n, mrf.edges)
        self.gamma = 1.0 / mult
        self.mult = mult
        self.isolated = np.flatnonzero(isolated)
        self._prepare_chain_arrays(cn, ce)

        fwd_level = _levels(n, a, b)
        # Backward levels: same construction on reversed indices.
        bwd_level = _levels(n, (n - 1) - b, (n - 1) - a)[::-1]
        self.fwd_plan = self._plan(fwd_level, forward=True)
        self.bwd_plan = self._plan(bwd_level, forward=False)

    def _plan(self, level, forward):
        """Per level: member nodes, edges that send messages, and padded
        incident-edge tables (pad index ``m`` points at an all-zero row)."""
        plan = []
        if len(level) == 0:
            return plan
        m = len(self.a)
        node_order = np.argsort(level, kind="stable")
        bounds = np.searchsorted(level[node_order], np.arange(level.max() + 2))
        inc_b = self._incidence(self.b)
        inc_a = self._incidence(self.a)
        for k in range(level.max() + 1):
            nodes = node_order[bounds[k] : bounds[k + 1]]
            into_b = inc_b[nodes]
            into_a = inc_a[nodes]
            send = np.sort(into_a[into_a < m]) if forward else np.sort(into_b[into_b < m])
            plan.append((nodes, into_a, into_b, send))
        return plan

    def _incidence(self, endpoint):
        """``(n, maxdeg)`` table of edges having ``endpoint == node``, padded with ``m``."""
        n, m = self.mrf.n_nodes, len(endpoint)
        order = np.argsort(endpoint, kind="stable")
        counts = np.bincount(endpoint, minlength=n)
        width = max(int(counts.max(initial=0)), 1)
        table = np.full((n, width), m, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(m) - np.repeat(starts, counts)
        table[endpoint[order], slot] = order
        return table

    def _prepare_chain_arrays(self, chains_nodes, chains_edges):
        nc = len(chains_nodes)
        maxlen = max((len(c) for c in chains_nodes), default=0)
        self.chain_nodes = np.full((nc, maxlen), -1, dtype=np.int64)
        self.chain_edges = np.full((nc, max(maxlen - 1, 0)), -1, dtype=np.int64)
        for i, (cn, ce) in enumerate(zip(chains_nodes, chains_edges)):
            self.chain_nodes[i, : len(cn)] = cn
            self.chain_edges[i, : len(ce)] = ce

    def _theta_hat(self, nodes, into_a, into_b, fwd, bwd):
        th = self._scratch
        th[nodes] = self.mrf.unary[nodes] + fwd[into_b].sum(axis=1) + bwd[into_a].sum(axis=1)
        return th

    def lower_bound(self, fwd, bwd) -> float:
        mrf = self.mrf
        m = len(mrf.edges)
        th = mrf.unary.copy()
        if m:
            np.add.at(th, self.b, fwd[:m])
            np.add.at(th, self.a, bwd[:m])
        bound = 0.0
        if len(self.isolated):
            bound += th[self.isolated].min(axis=1).sum()
        if not len(self.chain_nodes):
            return float(bound)
        share = th / self.mult[:, None]
        # Reparametrized edge terms.
        edge_terms = mrf.pairwise - fwd[:m, None, :] - bwd[:m, :, None]
        nodes0 = self.chain_nodes[:, 0]
        v = share[nodes0].copy()
        for k in range(self.chain_edges.shape[1]):
            live = self.chain_edges[:, k] >= 0
            if not live.any():
                break
            e = self.chain_edges[live, k]
            nxt = self.chain_nodes[live, k + 1]
            with np.errstate(invalid="ignore"):
                v[live] = (v[live][:, :, None] + edge_terms[e]).min(axis=1) + share[nxt]
        return float(bound + v.min(axis=1).sum())

    def decode(self, bwd) -> np.ndarray:
        """Sequential decoding in forward order conditioned on already fixed labels."""
        mrf = self.mrf
        labels = np.zeros(mrf.n_nodes + 1, dtype=np.int64)
        a_pad = np.append(self.a, mrf.n_nodes)
        for nodes, into_a, into_b, _ in self.fwd_plan:
            # Lower neighbors are already fixed: exact pairwise column.
            fixed_terms = self._pw_pad[into_b, labels[a_pad[into_b]], :].sum(axis=1)
            cost = mrf.unary[nodes] + fixed_terms + bwd[into_a].sum(axis=1)
            labels[nodes] = np.argmin(cost, axis=1)
        return labels[:-1]

    def decode_reverse(self, fwd) -> np.ndarray:
        """Mirror of :meth:`decode`: highest node first, lower neighbors via forward messages."""
        mrf = self.mrf
        labels = np.zeros(mrf.n_nodes + 1, dtype=np.int64)
        b_pad = np.append(self.b, mrf.n_nodes)
        for nodes, into_a, into_b, _ in self.bwd_plan:
            fixed_terms = self._pw_pad[into_a, :, labels[b_pad[into_a]]].sum(axis=1)
            cost = mrf.unary[nodes] + fixed_terms + fwd[into_b].sum(axis=1)
            labels[nodes] = np.argmin(cost, axis=1)
        return labels[:-1]

    def polish(self, labels, max_sweeps: int = 50) -> np.ndarray:
        """Iterated conditional modes, one forward level at a time.

        Nodes sharing a level are never adjacent, so a whole level can move at
        once; a node changes only on strict improvement, hence the energy never
        increases.
        """
        mrf = self.mrf
        lab = np.append(np.asarray(labels, dtype=np.int64), 0)
        a_pad = np.append(self.a, mrf.n_nodes)
        b_pad = np.append(self.b, mrf.n_nodes)
        for _ in range(max_sweeps):
            changed = False
            for nodes, into_a, into_b, _ in self.fwd_plan:
                cost = (mrf.unary[nodes] + self._pw_pad[into_b, lab[a_pad[into_b]], :].sum(axis=1)
                        + self._pw_pad[into_a, :, lab[b_pad[into_a]]].sum(axis=1))
                cur = lab[nodes]
                new = np.argmin(cost, axis=1)
                rows = np.arange(len(nodes))
                better = cost[rows, new] < cost[rows, cur]
                if better.any():
                    lab[nodes[better]] = new[better]
                    changed = True
            if not changed:
                break
        return lab[:-1]

    def run(self, max_iter: int = 100, bound_tol: float = 1e-6) -> TRWSResult:
        mrf = self.mrf
        m, L = len(mrf.edges), mrf.n_labels
        # Row m stays zero: target of padded incidence entries.
        fwd = np.zeros((m + 1, L))
        bwd = np.zeros((m + 1, L))
        self._pw_pad = np.concatenate([mrf.pairwise, np.zeros((1, L, L))])
        self._scratch = np.zeros((mrf.n_nodes, L))
        best_labels = np.argmin(mrf.unary, axis=1)
        best_e = mrf.energy(best_labels)
        bounds = []
        it = 0
        for it in range(1, max_iter + 1):
            for nodes, into_a, into_b, send in self.fwd_plan:
                th = self._theta_hat(nodes, into_a, into_b, fwd, bwd)
                if len(send):
                    src = self.a[send]
                    t = self.gamma[src, None] * th[src] - bwd[send]
                    msg = (t[:, :, None] + mrf.pairwise[send]).min(axis=1)
                    fwd[send] = msg - msg.min(axis=1, keepdims=True)
            for nodes, into_a, into_b, send in self.bwd_plan:
                th = self._theta_hat(nodes, into_a, into_b, fwd, bwd)
                if len(send):
                    src = self.b[send]
                    t = self.gamma[src, None] * th[src] - fwd[send]
                    msg = (mrf.pairwise[send] + t[:, None, :]).min(axis=2)
                    bwd[send] = msg - msg.min(axis=1, keepdims=True)
            for labels in (self.decode(bwd), self.decode_reverse(fwd)):
                e = mrf.energy(labels)
                if e < best_e:
                    best_e, best_labels = e, labels
            lb = self.lower_bound(fwd, bwd)
            bounds.append(lb)
            if len(bounds) > 1 and bounds[-1] - bounds[-2] < bound_tol:
                break
            if best_e - lb <= 0:
                break
        if m:
            best_labels = self.polish(best_labels)
            best_e = mrf.energy(best_labels)
        return TRWSResult(best_labels, best_e, bounds[-1] if bounds else best_e, bounds, it)


def trws(mrf: MRF, max_iter: int = 100, bound_tol: float = 1e-6) -> TRWSResult:
    return TRWS(mrf).run(max_iter=max_iter, bound_tol=bound_tol)


def icm(mrf: MRF, labels=None, max_sweeps: int = 100) -> np.ndarray:
    """Iterated conditional modes in node order; baseline for comparisons."""
    labels = np.zeros(mrf.n_nodes, dtype=np.int64) if labels is None else np.array(labels, dtype=np.int64)
    nbrs = [[] for _ in range(mrf.n_nodes)]
    for e, (a, b) in enumerate(mrf.edges):
        nbrs[a].append((e, b, 0))
        nbrs[b].append((e, a, 1))
    for _ in range(max_sweeps):
        changed = False
        for s in range(mrf.n_nodes):
            cost = mrf.unary[s].copy()
            for e, t, side in nbrs[s]:
                cost += mrf.pairwise[e, :, labels[t]] if side == 0 else mrf.pairwise[e, labels[t], :]
            x = int(np.argmin(cost))
            if x != labels[s] and cost[x] < cost[labels[s]]:
                labels[s] = x
                changed = True
        if not changed:
            break
    return labels
