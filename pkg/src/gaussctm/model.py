"""Static segment/network specifications and their assembled dynamics.

A specification is compiled into a :class:`TransitionSystem`: a list of
unit-vehicle transitions, each moving one vehicle between two cells (or
across the boundary), together with the state-dependent rate of each
transition and its gradient.  Everything downstream (exact simulation,
fluid/diffusion ODEs, stationary analysis) works off this one object.

State flattening is cell-major, class-minor: the density of class j in
cell i sits at index i*m + j.  Network states concatenate the roads in
declaration order, padding cells being ordinary one-cell roads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flux import DaganzoFlux, FluxFunction

__all__ = [
    "SegmentSpec",
    "RoadSpec",
    "Diverge",
    "Merge",
    "NetworkSpec",
    "NetworkConfigError",
    "TransitionSystem",
    "build_segment_system",
    "build_network_system",
    "rate_vector",
    "incidence_matrices",
    "drift",
    "drift_jacobian",
    "dispersion",
    "network_rate_vector",
]


class NetworkConfigError(ValueError):
    """Inconsistent junction wiring or routing parameters."""


class RateBlock:
    """A group of transitions whose rates are computed together.

    rate_np(rho) returns the rates of the group's transitions; grad_np
    returns their derivatives with respect to the state entries listed
    in `depends`.  rate_py is an optional fast scalar path used by the
    event-driven simulator (operates on a plain list of densities).
    """

    def __init__(self, srcs, dsts, depends, rate_np, grad_np, labels, rate_py=None):
        self.srcs = srcs
        self.dsts = dsts
        self.depends = tuple(depends)
        self.rate_np = rate_np
        self.grad_np = grad_np
        self.labels = labels
        self.rate_py = rate_py if rate_py is not None else (
            lambda rho_list: [float(x) for x in rate_np(np.asarray(rho_list))]
        )
        self.offset = 0  # first transition index, set by TransitionSystem


class TransitionSystem:
    """Cells plus unit-vehicle transitions with state-dependent rates."""

    def __init__(self, lengths, m, rho_jam, blocks, cell_labels=None):
        self.m = m
        self.n_cells = len(lengths)
        self.lengths = np.asarray(lengths, dtype=float)
        self.n_state = self.n_cells * m
        # per state index: cell length and jam density of that (cell, class)
        self.state_lengths = np.repeat(self.lengths, m)
        self.rho_jam = np.asarray(rho_jam, dtype=float)
        self.x_jam = np.rint(self.rho_jam * self.state_lengths).astype(int)
        self.blocks = blocks
        self.cell_labels = cell_labels

        srcs, dsts, labels = [], [], []
        for b in blocks:
            b.offset = len(srcs)
            srcs.extend(b.srcs)
            dsts.extend(b.dsts)
            labels.extend(b.labels)
        self.n_trans = len(srcs)
        self.src = np.array([-1 if s is None else s for s in srcs])
        self.dst = np.array([-1 if d is None else d for d in dsts])
        self.labels = labels

        H = np.zeros((self.n_state, self.n_trans))
        for t in range(self.n_trans):
            if self.dst[t] >= 0:
                H[self.dst[t], t] += 1.0
            if self.src[t] >= 0:
                H[self.src[t], t] -= 1.0
        self.H = H
        self.L = np.diag(1.0 / self.state_lengths)
        self.LH = H / self.state_lengths[:, None]

        # state index -> blocks whose rate depends on it (simulator use)
        self.state_to_blocks = [[] for _ in range(self.n_state)]
        for bi, b in enumerate(blocks):
            for s in b.depends:
                self.state_to_blocks[s].append(bi)
        self.external = [
            t for t in range(self.n_trans) if self.src[t] < 0 or self.dst[t] < 0
        ]

    def check_domain(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.n_state,):
            raise ValueError(f"state must have shape ({self.n_state},)")
        if np.any(rho < -1e-12) or np.any(rho > self.rho_jam + 1e-9):
            raise ValueError("density outside [0, rho_jam]")

    def rates(self, rho):
        rho = np.asarray(rho, dtype=float)
        q = np.empty(self.n_trans)
        for b in self.blocks:
            q[b.offset : b.offset + len(b.srcs)] = b.rate_np(rho)
        np.maximum(q, 0.0, out=q)
        return q

    def rate_jacobian(self, rho):
        rho = np.asarray(rho, dtype=float)
        dq = np.zeros((self.n_trans, self.n_state))
        for b in self.blocks:
            g = b.grad_np(rho)
            dq[b.offset : b.offset + len(b.srcs), list(b.depends)] = g
        return dq

    def drift(self, rho):
        return self.LH @ self.rates(rho)

    def drift_jacobian(self, rho):
        return self.LH @ self.rate_jacobian(rho)

    def dispersion(self, rho):
        return self.LH * np.sqrt(self.rates(rho))[None, :]


@dataclass(frozen=True)
class SegmentSpec:
    """A single road segment: d cells in series with boundary arrivals
    at cell 1 (bounded by lam) and departures at cell d (bounded by nu)."""

    d: int
    lengths: tuple  # km per cell, length d
    flux: FluxFunction
    lam: tuple  # veh/h per class
    nu: tuple  # veh/h per class

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("need at least one cell")
        if len(self.lengths) != self.d:
            raise ValueError("lengths must have one entry per cell")
        if any(l <= 0 for l in self.lengths):
            raise ValueError("cell lengths must be positive")
        if len(self.lam) != self.flux.m or len(self.nu) != self.flux.m:
            raise ValueError("lam/nu must have one entry per class")
        if any(x < 0 for x in self.lam) or any(x < 0 for x in self.nu):
            raise ValueError("boundary rates must be nonnegative")

    @staticmethod
    def uniform(d, cell_length, flux, lam, nu) -> "SegmentSpec":
        lam = tuple(np.atleast_1d(lam).astype(float))
        nu = tuple(np.atleast_1d(nu).astype(float))
        return SegmentSpec(d, (float(cell_length),) * d, flux, lam, nu)

    @property
    def m(self):
        return self.flux.m

    def system(self) -> TransitionSystem:
        return build_segment_system(self)


def _cell_slice(cell, m):
    return slice(cell * m, (cell + 1) * m)


def build_segment_system(spec: SegmentSpec) -> TransitionSystem:
    f = spec.flux
    m, d = f.m, spec.d
    lam = np.asarray(spec.lam, dtype=float)
    nu = np.asarray(spec.nu, dtype=float)
    blocks = []

    def boundary_block(b):
        if b == 0:
            srcs = [None] * m
            dsts = list(range(m))
            depends = tuple(range(m))
            rate = lambda rho: f.inflow(lam, rho[_cell_slice(0, m)])
            grad = lambda rho: f.inflow_grad(lam, rho[_cell_slice(0, m)])
        elif b == d:
            srcs = [(d - 1) * m + j for j in range(m)]
            dsts = [None] * m
            depends = tuple(srcs)
            rate = lambda rho: f.outflow(rho[_cell_slice(d - 1, m)], nu)
            grad = lambda rho: f.outflow_grad(rho[_cell_slice(d - 1, m)], nu)
        else:
            srcs = [(b - 1) * m + j for j in range(m)]
            dsts = [b * m + j for j in range(m)]
            depends = tuple(srcs) + tuple(dsts)
            rate = lambda rho: f.flux(rho[_cell_slice(b - 1, m)], rho[_cell_slice(b, m)])

            def grad(rho, b=b):
                gs, gr = f.flux_grad(rho[_cell_slice(b - 1, m)], rho[_cell_slice(b, m)])
                return np.hstack([gs, gr])

        labels = [f"q[{b},{j + 1}]" for j in range(m)]
        rate_py = None
        if isinstance(f, DaganzoFlux):
            p = f.params
            if b == 0:
                lam0 = float(lam[0])
                rate_py = lambda rl: [
                    min(lam0, p.w * (p.rho_max - rl[0]), p.q_max)
                ]
            elif b == d:
                nu0 = float(nu[0])
                i = d - 1
                rate_py = lambda rl: [min(p.v_f * rl[i], p.q_max, nu0)]
            else:
                i = b - 1
                rate_py = lambda rl: [
                    min(
                        p.v_f * rl[i],
                        p.w * (p.rho_max - rl[i + 1]),
                        p.q_max,
                    )
                ]
        return RateBlock(srcs, dsts, depends, rate, grad, labels, rate_py)

    for b in range(d + 1):
        blocks.append(boundary_block(b))

    rho_jam = np.tile(f.rho_jam, d)
    return TransitionSystem(spec.lengths, m, rho_jam, blocks)


# ---------------------------------------------------------------------------
# networks


@dataclass(frozen=True)
class RoadSpec:
    name: str
    n_cells: int
    cell_length: float  # km
    flux: FluxFunction


@dataclass(frozen=True)
class Diverge:
    """Last cell of `upstream` splits into the first cells of the branch
    roads with fixed routing probabilities."""

    upstream: str
    branches: tuple  # ((road_name, probability), ...)


@dataclass(frozen=True)
class Merge:
    """Last cells of the upstream roads merge into the first cell of
    `downstream`; priorities give each upstream's share of capacity."""

    upstreams: tuple  # ((road_name, priority), ...)
    downstream: str


@dataclass(frozen=True)
class NetworkSpec:
    roads: tuple  # RoadSpec in declaration order
    links: tuple = ()  # (road_a, road_b): last cell of a feeds first of b
    diverges: tuple = ()
    merges: tuple = ()
    arrivals: tuple = ()  # (road_name, lam veh/h) into the road's first cell
    departures: tuple = ()  # (road_name, nu veh/h) from the road's last cell

    def __post_init__(self):
        names = [r.name for r in self.roads]
        if len(set(names)) != len(names):
            raise NetworkConfigError("duplicate road names")
        for r in self.roads:
            if r.flux.m != 1:
                raise NetworkConfigError("network assembly supports one vehicle class")
        known = set(names)
        junction_cells = set()
        for dv in self.diverges:
            probs = [p for _, p in dv.branches]
            if dv.upstream not in known or any(b not in known for b, _ in dv.branches):
                raise NetworkConfigError("diverge references unknown road")
            if abs(sum(probs) - 1.0) > 1e-12 or any(p <= 0 for p in probs):
                raise NetworkConfigError("diverge routing probabilities must sum to 1")
            junction_cells.add((dv.upstream, "last"))
        for mg in self.merges:
            prios = [p for _, p in mg.upstreams]
            if mg.downstream not in known or any(u not in known for u, _ in mg.upstreams):
                raise NetworkConfigError("merge references unknown road")
            if len(mg.upstreams) != 2:
                raise NetworkConfigError("merges must have exactly two upstream roads")
            if abs(sum(prios) - 1.0) > 1e-12 or any(p <= 0 for p in prios):
                raise NetworkConfigError("merge priorities must sum to 1")
            junction_cells.add((mg.downstream, "first"))
            for u, _ in mg.upstreams:
                junction_cells.add((u, "last"))
        for dv in self.diverges:
            for b, _ in dv.branches:
                junction_cells.add((b, "first"))
        for road, _ in self.arrivals:
            if (road, "first") in junction_cells:
                raise NetworkConfigError(
                    f"arrival cell of {road} also participates in a junction"
                )
        for road, _ in self.departures:
            if (road, "last") in junction_cells:
                raise NetworkConfigError(
                    f"departure cell of {road} also participates in a junction"
                )

    def system(self) -> TransitionSystem:
        return build_network_system(self)


def _min_with_ties(values, grads):
    """Minimum of candidate values; gradient entries are averaged over
    all candidates attaining the minimum (symmetric tie convention)."""
    v = min(values)
    active = [g for val, g in zip(values, grads) if val == v]
    avg = {}
    for g in active:
        for idx, val in g.items():
            avg[idx] = avg.get(idx, 0.0) + val / len(active)
    return v, avg


def _median_with_ties(values, grads):
    order = sorted(range(3), key=lambda i: values[i])
    v = values[order[1]]
    active = [grads[i] for i in range(3) if values[i] == v]
    avg = {}
    for g in active:
        for idx, val in g.items():
            avg[idx] = avg.get(idx, 0.0) + val / len(active)
    return v, avg


def build_network_system(net: NetworkSpec) -> TransitionSystem:
    roads = {r.name: r for r in net.roads}
    lengths, rho_jam, cell_labels = [], [], []
    first, last = {}, {}
    for r in net.roads:
        first[r.name] = len(lengths)
        for i in range(r.n_cells):
            lengths.append(r.cell_length)
            rho_jam.append(float(r.flux.rho_jam[0]))
            cell_labels.append(f"{r.name}[{i + 1}]")
        last[r.name] = len(lengths) - 1

    blocks = []

    def demand(road, cell):
        f = roads[road].flux
        return (
            lambda rho: float(f.demand(rho[cell : cell + 1])[0]),
            lambda rho: {cell: float(f.demand_grad(rho[cell : cell + 1])[0, 0])},
        )

    def supply(road, cell):
        f = roads[road].flux
        assert isinstance(f, DaganzoFlux)
        return (
            lambda rho: f.receiving_scalar(rho[cell]),
            lambda rho: {cell: f.receiving_grad_scalar(rho[cell])},
        )

    def add_link(f, src, dst, label):
        def rate(rho):
            return np.array(
                [min(f.sending_scalar(rho[src]), f.receiving_scalar(rho[dst]))]
            )

        def grad(rho):
            s, r = f.sending_scalar(rho[src]), f.receiving_scalar(rho[dst])
            gs = f.sending_grad_scalar(rho[src]) if s < r else 0.0
            gr = f.receiving_grad_scalar(rho[dst]) if r < s else 0.0
            return np.array([[gs, gr]])

        blocks.append(RateBlock([src], [dst], (src, dst), rate, grad, [label]))

    # intra-road links and explicit road-to-road links
    for r in net.roads:
        assert isinstance(r.flux, DaganzoFlux)
        for i in range(r.n_cells - 1):
            c = first[r.name] + i
            add_link(r.flux, c, c + 1, f"{r.name}[{i + 1}->{i + 2}]")
    for a, b in net.links:
        add_link(roads[b].flux, last[a], first[b], f"{a}->{b}")

    for road, lam in net.arrivals:
        f = roads[road].flux
        c = first[road]

        def rate(rho, f=f, c=c, lam=lam):
            return np.array([min(lam, f.receiving_scalar(rho[c]))])

        def grad(rho, f=f, c=c, lam=lam):
            r = f.receiving_scalar(rho[c])
            return np.array([[f.receiving_grad_scalar(rho[c]) if r < lam else 0.0]])

        blocks.append(RateBlock([None], [c], (c,), rate, grad, [f"arrival->{road}"]))

    for road, nu in net.departures:
        f = roads[road].flux
        c = last[road]

        def rate(rho, f=f, c=c, nu=nu):
            return np.array([min(f.sending_scalar(rho[c]), nu)])

        def grad(rho, f=f, c=c, nu=nu):
            s = f.sending_scalar(rho[c])
            return np.array([[f.sending_grad_scalar(rho[c]) if s < nu else 0.0]])

        blocks.append(RateBlock([c], [None], (c,), rate, grad, [f"{road}->departure"]))

    for dv in net.diverges:
        u = last[dv.upstream]
        d_rate, d_grad = demand(dv.upstream, u)
        branch_cells = [first[b] for b, _ in dv.branches]
        probs = [p for _, p in dv.branches]
        sup = [supply(b, c) for (b, _), c in zip(dv.branches, branch_cells)]
        depends = (u, *branch_cells)

        def total(rho, d_rate=d_rate, d_grad=d_grad, sup=sup, probs=probs):
            vals = [d_rate(rho)] + [s(rho) / p for (s, _), p in zip(sup, probs)]
            grads = [d_grad(rho)] + [
                {k: v / p for k, v in g(rho).items()} for (_, g), p in zip(sup, probs)
            ]
            return _min_with_ties(vals, grads)

        def rate(rho, total=total, probs=probs):
            t, _ = total(rho)
            return np.array([p * t for p in probs])

        def grad(rho, total=total, probs=probs, depends=depends):
            _, g = total(rho)
            out = np.zeros((len(probs), len(depends)))
            for col, s in enumerate(depends):
                for row, p in enumerate(probs):
                    out[row, col] = p * g.get(s, 0.0)
            return out

        blocks.append(
            RateBlock(
                [u] * len(probs),
                branch_cells,
                depends,
                rate,
                grad,
                [f"{dv.upstream}->{b}" for b, _ in dv.branches],
            )
        )

    for mg in net.merges:
        (ra, pa), (rb, pb) = mg.upstreams
        ca, cb = last[ra], last[rb]
        cv = first[mg.downstream]
        da_rate, da_grad = demand(ra, ca)
        db_rate, db_grad = demand(rb, cb)
        s_rate, s_grad = supply(mg.downstream, cv)
        depends = (ca, cb, cv)

        def rates_grads(rho):
            sa, sb, r = da_rate(rho), db_rate(rho), s_rate(rho)
            ga, gb, gr = da_grad(rho), db_grad(rho), s_grad(rho)
            if sa + sb <= r:
                return [(sa, ga), (sb, gb)]
            out = []
            for s, gs, s_o, gs_o, p in ((sa, ga, sb, gb, pa), (sb, gb, sa, ga, pb)):
                vals = [s, r - s_o, p * r]
                grads = [
                    gs,
                    {k: gr.get(k, 0.0) - gs_o.get(k, 0.0) for k in {*gr, *gs_o}},
                    {k: p * v for k, v in gr.items()},
                ]
                out.append(_median_with_ties(vals, grads))
            return out

        def rate(rho, rates_grads=rates_grads):
            return np.array([v for v, _ in rates_grads(rho)])

        def grad(rho, rates_grads=rates_grads, depends=depends):
            rg = rates_grads(rho)
            out = np.zeros((2, len(depends)))
            for row, (_, g) in enumerate(rg):
                for col, s in enumerate(depends):
                    out[row, col] = g.get(s, 0.0)
            return out

        blocks.append(
            RateBlock(
                [ca, cb],
                [cv, cv],
                depends,
                rate,
                grad,
                [f"{ra}->{mg.downstream}", f"{rb}->{mg.downstream}"],
            )
        )

    return TransitionSystem(lengths, 1, rho_jam, blocks, cell_labels)


# ---------------------------------------------------------------------------
# spec-level operations


def rate_vector(state, spec: SegmentSpec) -> np.ndarray:
    """Transition rates q_{b,j}, b = 0..d, lexicographic in (b, j)."""
    sys = spec.system()
    sys.check_domain(state)
    return sys.rates(state)


def incidence_matrices(spec: SegmentSpec):
    """The diagonal cell-length inverse L and the inflow/outflow
    incidence H with drift F = L H Q."""
    sys = spec.system()
    return sys.L, sys.H


def drift(state, spec: SegmentSpec) -> np.ndarray:
    sys = spec.system()
    sys.check_domain(state)
    return sys.drift(state)


def drift_jacobian(state, spec: SegmentSpec) -> np.ndarray:
    sys = spec.system()
    sys.check_domain(state)
    return sys.drift_jacobian(state)


def dispersion(state, spec: SegmentSpec) -> np.ndarray:
    sys = spec.system()
    sys.check_domain(state)
    return sys.dispersion(state)


def network_rate_vector(state, net: NetworkSpec):
    """All transition rates of the assembled network, with labels."""
    sys = net.system()
    sys.check_domain(state)
    return sys.rates(state), list(sys.labels)
