"""Lane-constrained, data-driven multi-agent traffic.

Every step each agent draws candidate velocities from a bank of recorded
velocities for its class and keeps the one with the lowest rule energy
(velocity continuity, collision avoidance, lane attraction, direction).
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .io import FormatError, load_json, read_trajectories

log = logging.getLogger(__name__)

CLASSES = ("car", "cyclist", "pedestrian")
RADIUS = {"car": 1.0, "cyclist": 0.5, "pedestrian": 0.3}
MAX_SPEED = {"car": 30.0, "cyclist": 10.0, "pedestrian": 3.0}
CLASS_ALIASES = {"ped": "pedestrian", "bike": "cyclist", "bicycle": "cyclist"}
TTC_HORIZON = 3.0
NEIGHBOR_RADIUS = 20.0
HEADING_SPEED = 0.1


def canonical_class(name: str) -> str:
    name = CLASS_ALIASES.get(name.strip().lower(), name.strip().lower())
    if name not in CLASSES:
        raise ValueError(f"unknown agent class {name!r}; expected one of {CLASSES}")
    return name


# ----------------------------------------------------------------------------
# lanes


@dataclass
class Lane:
    """A polyline centerline with a width; ``direction`` +1 travels in point order, -1 against it.

    Projections treat the first and last segments as extending forever, so
    agents that drive past the end of the mapped road keep a lane frame.
    """

    centerline: np.ndarray
    width: float
    direction: int = 1

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float).reshape(-1, 2)
        if len(self.centerline) < 2:
            raise ValueError("lane centerline needs at least 2 points")
        if not self.width > 0:
            raise ValueError(f"lane width must be positive, got {self.width}")
        if self.direction not in (1, -1):
            raise ValueError("lane direction must be +1 or -1")
        seg = np.diff(self.centerline, axis=0)
        self._seg_len = np.linalg.norm(seg, axis=1)
        if np.any(self._seg_len <= 0):
            raise ValueError("lane centerline has repeated points")
        self._seg_dir = seg / self._seg_len[:, None]
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def project(self, points):
        """Nearest centerline points.

        Returns:
            ``(foot, tangent, s)``: foot points ``(N, 2)``, unit tangents in the
            travel sense ``(N, 2)`` and arclength positions ``(N,)``.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        a = self.centerline[:-1]
        rel = p[:, None, :] - a[None]
        t = np.einsum("nkd,kd->nk", rel, self._seg_dir)
        lo = np.zeros(len(a))
        hi = self._seg_len.copy()
        lo[0] = -np.inf
        hi[-1] = np.inf
        t = np.clip(t, lo, hi)
        foot = a[None] + t[..., None] * self._seg_dir[None]
        d2 = ((p[:, None, :] - foot) ** 2).sum(-1)
        k = np.argmin(d2, axis=1)
        idx = np.arange(len(p))
        return foot[idx, k], self.direction * self._seg_dir[k], self._cum[k] + t[idx, k]

    def point_at(self, s):
        """Centerline point and travel tangent at arclength ``s`` (extended past the ends)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        k = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg_len) - 1)
        pt = self.centerline[k] + (s - self._cum[k])[:, None] * self._seg_dir[k]
        return pt, self.direction * self._seg_dir[k]


@dataclass
class LaneMap:
    lanes: list

    def __post_init__(self):
        if not self.lanes:
            raise ValueError("lane map has no lanes")
        self.lanes = [ln if isinstance(ln, Lane) else Lane(**ln) for ln in self.lanes]

    @classmethod
    def from_dict(cls, d: dict) -> "LaneMap":
        if "lanes" not in d:
            raise FormatError("lane map JSON needs a 'lanes' list")
        try:
            return cls([Lane(np.asarray(ln["centerline"], float), float(ln["width"]), int(ln.get("direction", 1)))
                        for ln in d["lanes"]])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad lane entry: {exc}") from None

    @classmethod
    def load(cls, path) -> "LaneMap":
        return cls.from_dict(load_json(path))

    def to_dict(self) -> dict:
        return {"lanes": [{"centerline": ln.centerline.tolist(), "width": ln.width, "direction": ln.direction}
                          for ln in self.lanes]}


def straight_road(length: float = 3000.0, n_lanes: int = 4, width: float = 3.5) -> LaneMap:
    """A straight road along +x; the lower half of the lanes travel towards -x."""
    lanes = []
    for i in range(n_lanes):
        y = (i - (n_lanes - 1) / 2) * width
        direction = 1 if i >= n_lanes // 2 else -1
        lanes.append(Lane(np.array([[0.0, y], [length, y]]), width, direction))
    return LaneMap(lanes)


# ----------------------------------------------------------------------------
# agents and config


@dataclass
class AgentState:
    id: int
    cls: str
    position: np.ndarray
    velocity: np.ndarray
    heading: float
    lane_id: int
    radius: float = -1.0

    def __post_init__(self):
        self.cls = canonical_class(self.cls)
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        if self.radius < 0:
            self.radius = RADIUS[self.cls]
        if np.linalg.norm(self.velocity) > MAX_SPEED[self.cls] + 1e-9:
            raise ValueError(f"agent {self.id}: speed above the {self.cls} limit")


@dataclass(frozen=True)
class TrafficConfig:
    dt: float = 0.1
    candidate_count: int = 64
    w_cont: float = 1.0
    w_coll: float = 10.0
    w_attr: float = 0.5
    w_dir: float = 2.0
    safe_gap: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")
        for k in ("w_cont", "w_coll", "w_attr", "w_dir", "safe_gap"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficConfig":
        unknown = set(d) - set(asdict(cls()))
        if unknown:
            raise ValueError(f"unknown traffic config keys: {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------------------
# velocity bank


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class VelocityBank:
    """Recorded velocities per class.

    ``velocities`` are world-frame samples; ``relative`` holds the same
    samples expressed in the recorded agent's heading frame (x along the
    heading), which is what gets replayed along a simulated lane.
    """

    velocities: dict = field(default_factory=dict)
    relative: dict = field(default_factory=dict)

    def __post_init__(self):
        self.velocities = {canonical_class(k): np.asarray(v, float).reshape(-1, 2) for k, v in self.velocities.items()}
        rel = {canonical_class(k): np.asarray(v, float).reshape(-1, 2) for k, v in self.relative.items()}
        for k, v in self.velocities.items():
            rel.setdefault(k, v)
        self.relative = rel

    def speeds(self, cls: str) -> np.ndarray:
        return np.linalg.norm(self.velocities[canonical_class(cls)], axis=1)

    def candidates(self, cls: str) -> np.ndarray:
        """Heading-frame samples of a class."""
        cls = canonical_class(cls)
        if cls not in self.relative or len(self.relative[cls]) == 0:
            raise ValueError(f"velocity bank has no samples for class {cls!r}")
        return self.relative[cls]


def load_velocity_bank(path, dt: float | None = None) -> VelocityBank:
    """Finite-difference velocities between consecutive records of each agent.

    The time step comes from ``dt`` or else the trajectory's sidecar JSON.
    Agents seen in a single frame contribute nothing.
    """
    rows, side_dt = read_trajectories(path)
    dt = side_dt if dt is None else dt
    if dt is None or not dt > 0:
        raise FormatError(f"{path}: no positive dt (pass dt or provide the sidecar JSON)")
    return bank_from_rows(rows, dt)


def bank_from_rows(rows, dt: float) -> VelocityBank:
    tracks = defaultdict(list)
    for r in rows:
        tracks[r["agent_id"]].append(r)
    world, rel = defaultdict(list), defaultdict(list)
    for aid in sorted(tracks):
        tr = sorted(tracks[aid], key=lambda r: r["frame_id"])
        if len(tr) < 2:
            log.info("agent %d appears once; skipped", aid)
            continue
        for a, b in zip(tr, tr[1:]):
            gap = (b["frame_id"] - a["frame_id"]) * dt
            if gap <= 0:
                continue
            v = np.array([b["x"] - a["x"], b["y"] - a["y"]]) / gap
            cls = canonical_class(a["class"])
            world[cls].append(v)
            rel[cls].append(_rot(-a["heading"]) @ v)
    return VelocityBank({k: np.array(v) for k, v in world.items()}, {k: np.array(v) for k, v in rel.items()})


# ----------------------------------------------------------------------------
# initialization


def lane_capacity(lanes: LaneMap, spacing: float) -> int:
    return int(sum(np.floor(ln.length / spacing) for ln in lanes.lanes))


def init_agents(lanes: LaneMap, counts: dict, cfg: TrafficConfig = TrafficConfig(),
                bank: VelocityBank | None = None) -> list:
    """Place agents at random free slots of the lanes.

    Lanes are cut into slots one largest-diameter-plus-gap long; agents take
    distinct random slots, get a random along-lane jitter inside the slot and
    a lateral offset that keeps their disc inside the lane, and face the lane
    tangent.  With a bank, the initial velocity is a bank sample replayed
    along the lane (speed clipped to the class limit); otherwise agents start
    at rest.

    Raises:
        ValueError: more agents than slots.
    """
    counts = {canonical_class(k): int(v) for k, v in counts.items() if int(v) > 0}
    total = sum(counts.values())
    if total == 0:
        return []
    r_max = max(RADIUS[c] for c in counts)
    spacing = 2 * r_max + cfg.safe_gap
    slots = [(li, j) for li, ln in enumerate(lanes.lanes) for j in range(int(np.floor(ln.length / spacing)))]
    if total > len(slots):
        raise ValueError(f"requested {total} agents but the lanes hold at most {len(slots)}")
    rng = np.random.default_rng([cfg.seed, 0x1A17])
    order = rng.permutation(len(slots))
    agents, taken = [], 0
    classes = [c for c in CLASSES if c in counts for _ in range(counts[c])]
    for aid, cls in enumerate(classes):
        r = RADIUS[cls]
        placed = False
        while not placed and taken < len(order):
            li, j = slots[order[taken]]
            taken += 1
            ln = lanes.lanes[li]
            for attempt in range(20):
                along = (j + 0.5) * spacing
                lateral = 0.0
                if attempt < 19:
                    along += rng.uniform(-1, 1) * (spacing / 2 - r)
                    lateral = rng.uniform(-1, 1) * max(ln.width / 2 - r, 0.0)
                pt, tan = ln.point_at(along)
                pos = pt[0] + lateral * np.array([-tan[0, 1], tan[0, 0]])
                if all(np.linalg.norm(pos - a.position) >= r + a.radius + cfg.safe_gap for a in agents):
                    placed = True
                    break
        if not placed:
            raise ValueError(f"could only place {len(agents)} of {total} agents")
        heading = float(np.arctan2(tan[0, 1], tan[0, 0]))
        vel = np.zeros(2)
        if bank is not None:
            cand = bank.candidates(cls)
            vel = _rot(heading) @ cand[rng.integers(len(cand))]
            speed = np.linalg.norm(vel)
            if speed > MAX_SPEED[cls]:
                vel *= MAX_SPEED[cls] / speed
        agents.append(AgentState(aid, cls, pos, vel, heading, li))
    return agents


# ----------------------------------------------------------------------------
# energy


def time_to_collision(p_a, v_a, r_a, p_b, v_b, r_b) -> float:
    """First time two constant-velocity discs touch; 0 if they overlap now, inf if never."""
    dp = np.asarray(p_b, float) - np.asarray(p_a, float)
    dv = np.asarray(v_b, float) - np.asarray(v_a, float)
    rr = r_a + r_b
    c = dp @ dp - rr * rr
    if c <= 0:
        return 0.0
    a = dv @ dv
    b = 2 * (dp @ dv)
    if a <= 0 or b >= 0:
        return np.inf
    disc = b * b - 4 * a * c
    if disc < 0:
        return np.inf
    return float((-b - np.sqrt(disc)) / (2 * a))


def _ttc_many(dp, dv, rr):
    """Vectorized :func:`time_to_collision` over ``(N, 2)`` relative states."""
    c = (dp * dp).sum(-1) - rr * rr
    a = (dv * dv).sum(-1)
    b = 2 * (dp * dv).sum(-1)
    disc = b * b - 4 * a * c
    ok = (a > 0) & (b < 0) & (disc >= 0)
    t = np.full(np.broadcast(c, a).shape, np.inf)
    safe_a = np.where(ok, a, 1.0)
    t = np.where(ok, (-b - np.sqrt(np.where(ok, disc, 0.0))) / (2 * safe_a), t)
    return np.where(c <= 0, 0.0, t)


def _neighbor_arrays(neighbors):
    if isinstance(neighbors, tuple):
        return neighbors
    n = list(neighbors)
    return (np.array([o.position for o in n]).reshape(-1, 2), np.array([o.velocity for o in n]).reshape(-1, 2),
            np.array([o.radius for o in n], dtype=float))


def energy_terms(agent: AgentState, candidates, neighbors, lane: Lane, cfg: TrafficConfig):
    """Unweighted (continuity, collision, attraction, direction) terms per candidate.

    ``neighbors`` is a list of agents or a ``(positions, velocities, radii)`` tuple.
    """
    v = np.atleast_2d(np.asarray(candidates, float))
    cont = ((v - agent.velocity) ** 2).sum(-1)
    n_pos, n_vel, n_r = _neighbor_arrays(neighbors)
    dp = n_pos - agent.position
    near = (dp * dp).sum(-1) <= NEIGHBOR_RADIUS**2
    coll = np.zeros(len(v))
    if near.any():
        ttc = _ttc_many(dp[near][None], n_vel[near][None] - v[:, None], agent.radius + n_r[near][None])
        coll = (np.maximum(0.0, 1.0 - ttc / TTC_HORIZON) ** 2).sum(axis=1)
    p_next = agent.position + v * cfg.dt
    foot, _, _ = lane.project(p_next)
    attr = ((p_next - foot) ** 2).sum(-1)
    _, tan, _ = lane.project(agent.position)
    speed = np.linalg.norm(v, axis=1)
    cos = np.where(speed > 0, (v @ tan[0]) / np.where(speed > 0, speed, 1.0), 1.0)
    return cont, coll, attr, 1.0 - cos


def agent_energy(agent: AgentState, candidate_v, neighbors, lane: Lane, cfg: TrafficConfig = TrafficConfig()):
    """Rule energy of moving ``agent`` with ``candidate_v`` for one step.

    ``w_cont |v - v_prev|^2 + w_coll sum_n max(0, 1 - ttc/3 s)^2
    + w_attr |p_next - centerline|^2 + w_dir (1 - cos(v, tangent))``, with
    neighbors counted within 20 m.  A zero candidate has no direction cost.
    Accepts one candidate (returns a float) or an ``(N, 2)`` array.
    """
    v = np.asarray(candidate_v, float)
    cont, coll, attr, dirc = energy_terms(agent, v, neighbors, lane, cfg)
    e = cfg.w_cont * cont + cfg.w_coll * coll + cfg.w_attr * attr + cfg.w_dir * dirc
    return float(e[0]) if v.ndim == 1 else e


# ----------------------------------------------------------------------------
# stepping


def draw_candidates(agent: AgentState, bank: VelocityBank, lane: Lane, cfg: TrafficConfig, frame: int):
    """Seeded bank draws replayed along the lane tangent, zero velocity appended last."""
    pool = bank.candidates(agent.cls)
    rng = np.random.default_rng([cfg.seed, frame, agent.id])
    rel = pool[rng.integers(0, len(pool), cfg.candidate_count)]
    _, tan, _ = lane.project(agent.position)
    world = rel @ _rot(np.arctan2(tan[0, 1], tan[0, 0])).T
    speed = np.linalg.norm(world, axis=1)
    over = speed > MAX_SPEED[agent.cls]
    world[over] *= (MAX_SPEED[agent.cls] / speed[over])[:, None]
    return np.vstack([world, np.zeros((1, 2))])


def step(agents, bank: VelocityBank, lanes: LaneMap, cfg: TrafficConfig = TrafficConfig(), frame: int = 0) -> list:
    """Advance every agent one ``dt``, in id order.

    Candidates whose next position would come closer than radii plus
    ``safe_gap`` to any other agent (already-moved agents at their new
    positions) are discarded before scoring; the appended zero velocity keeps
    at least one option when the current state is separated.
    """
    state = sorted((replace(a, position=a.position.copy(), velocity=a.velocity.copy()) for a in agents),
                   key=lambda a: a.id)
    pos = np.array([a.position for a in state]).reshape(-1, 2)
    vel = np.array([a.velocity for a in state]).reshape(-1, 2)
    rad = np.array([a.radius for a in state], dtype=float)
    for i, a in enumerate(state):
        lane = lanes.lanes[a.lane_id]
        cand = draw_candidates(a, bank, lane, cfg, frame)
        others = np.arange(len(state)) != i
        o_pos, o_vel, o_rad = pos[others], vel[others], rad[others]
        p_next = a.position + cand * cfg.dt
        gap = np.linalg.norm(p_next[:, None] - o_pos[None], axis=-1) - (a.radius + o_rad)[None]
        ok = np.all(gap >= cfg.safe_gap, axis=1)
        if not ok.any():
            ok[-1] = True  # nothing keeps the gap: stay put
        e = np.where(ok, agent_energy(a, cand, (o_pos, o_vel, o_rad), lane, cfg), np.inf)
        v = cand[int(np.argmin(e))]  # first minimum = lowest sample index
        a.velocity = v.copy()
        a.position = a.position + v * cfg.dt
        if np.linalg.norm(v) > HEADING_SPEED:
            a.heading = float(np.arctan2(v[1], v[0]))
        pos[i], vel[i] = a.position, a.velocity
    return state


def simulate(agents, bank: VelocityBank, lanes: LaneMap, steps: int, cfg: TrafficConfig = TrafficConfig()):
    """Run ``steps`` steps; returns the list of agent lists, frame 0 being the input."""
    frames = [list(agents)]
    for k in range(steps):
        frames.append(step(frames[-1], bank, lanes, cfg, frame=k + 1))
    return frames


def frames_to_rows(frames) -> list:
    rows = []
    for f, agents in enumerate(frames):
        for a in agents:
            rows.append((f, a.id, a.cls, a.position[0], a.position[1], a.heading, a.velocity[0], a.velocity[1]))
    return rows


def rows_to_frames(rows) -> list:
    """Group trajectory rows (dicts) into per-frame ``(positions, velocities, radii)`` arrays."""
    by = defaultdict(list)
    for r in rows:
        by[r["frame_id"]].append(r)
    out = []
    for f in sorted(by):
        rs = sorted(by[f], key=lambda r: r["agent_id"])
        out.append((np.array([[r["x"], r["y"]] for r in rs]),
                    np.array([[r["vx"], r["vy"]] for r in rs]),
                    np.array([RADIUS[canonical_class(r["class"])] for r in rs])))
    return out


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class Histogram:
    edges: np.ndarray
    probs: np.ndarray
    n_samples: int


def histogram(samples, bins: int = 30, range_max: float | None = None) -> Histogram:
    """Sample fractions over ``bins`` equal intervals of ``[0, max]``."""
    x = np.asarray(samples, float).ravel()
    if len(x) == 0:
        return Histogram(np.zeros(bins + 1), np.zeros(bins), 0)
    top = float(x.max()) if range_max is None else float(range_max)
    if top <= 0:
        top = 1.0
    counts, edges = np.histogram(np.clip(x, 0, top), bins=bins, range=(0.0, top))
    return Histogram(edges, counts / counts.sum(), len(x))


def frame_samples(frames):
    """Per-frame per-agent speeds and nearest-neighbor center distances.

    ``frames`` is a list of agent lists or of ``(positions, velocities, radii)``.
    """
    speeds, mind = [], []
    for fr in frames:
        if isinstance(fr, tuple):
            pos, vel = fr[0], fr[1]
        else:
            pos = np.array([a.position for a in fr]).reshape(-1, 2)
            vel = np.array([a.velocity for a in fr]).reshape(-1, 2)
        speeds.append(np.linalg.norm(vel, axis=1))
        if len(pos) > 1:
            d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
            np.fill_diagonal(d, np.inf)
            mind.append(d.min(axis=1))
    speeds = np.concatenate(speeds) if speeds else np.zeros(0)
    mind = np.concatenate(mind) if mind else np.zeros(0)
    return speeds, mind


def eval_distributions(frames, bins: int = 30, speed_max: float | None = None, distance_max: float | None = None):
    """Speed and minimum-distance probability histograms over 30 (``bins``) intervals.

    Returns ``(speed_hist, distance_hist)``.  With a single agent the distance
    histogram is empty (all zero, ``n_samples == 0``) and a warning is logged.
    """
    speeds, mind = frame_samples(frames)
    if len(speeds) == 0:
        raise ValueError("eval_distributions needs at least one sample")
    if len(mind) == 0:
        log.warning("fewer than two agents per frame: minimum-distance histogram is empty")
    return histogram(speeds, bins, speed_max), histogram(mind, bins, distance_max)


def l1_distance(a: Histogram, b: Histogram) -> float:
    if len(a.probs) != len(b.probs) or not np.allclose(a.edges, b.edges):
        raise ValueError("histograms must share bin edges")
    return float(np.abs(a.probs - b.probs).sum())
