"""Deterministic four-way-intersection simulator.

An ego vehicle enters from the south branch under a fixed yield policy driven
by noisy observations of the intruder; the intruder enters from the scenario
branch under a blind IDM with a randomized aggressiveness exponent.  An
episode is fully determined by (initial relative state, observation-error
sequence, scenario, behavior seed, config).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import WorldConfig, IdmParams
from .geometry import Branch, Turn, Route, route_for, rect_distance
from .rng import stream


@dataclass
class Observation:
    """Intruder state relative to ego, corrupted by the step's error vector."""
    rx: float
    ry: float
    rvx: float
    rvy: float


@dataclass
class VehicleState:
    route: Route
    s: float        # arc progress along route
    speed: float

    def position(self):
        return self.route.position(self.s)

    def heading(self):
        return self.route.heading(self.s)

    def pose(self):
        x, y = self.route.position(self.s)
        return x, y, self.route.heading(self.s)

    def velocity(self):
        h = self.route.heading(self.s)
        return self.speed * math.cos(h), self.speed * math.sin(h)


@dataclass
class WorldState:
    ego: VehicleState
    intruder: VehicleState
    ego_params: IdmParams
    intruder_params: IdmParams
    collided: bool = False


@dataclass
class SimulationResult:
    """Trajectory snapshots plus the episode's robustness.

    states has one row per recorded step: [ego_x, ego_y, ego_v,
    intr_x, intr_y, intr_v, separation].
    """
    states: np.ndarray
    rho: float
    collided: bool
    scenario: Branch
    behavior_seed: int
    ego_turn: Turn
    intruder_turn: Turn
    intruder_delta: float

    @property
    def separations(self):
        return self.states[:, 6]

    def relative_positions(self):
        return self.states[:, 3:5] - self.states[:, 0:2]


def idm_acceleration(v: float, v_lead: float | None, gap: float,
                     params: IdmParams) -> float:
    """Intelligent Driver Model acceleration, clamped to [-b_hard, a_max].

    With no leader pass v_lead=None and gap=inf; only the free-flow term acts.
    """
    if not (math.isfinite(v) and (gap > 0.0)):
        raise ValueError(f"idm_acceleration: bad inputs v={v}, gap={gap}")
    a = params.a_max * (1.0 - (v / params.v0) ** params.delta)
    if v_lead is not None and math.isfinite(gap):
        if not math.isfinite(v_lead):
            raise ValueError(f"idm_acceleration: bad v_lead={v_lead}")
        dv = v - v_lead
        s_star = params.s_min + max(0.0, v * params.t_headway
                                    + v * dv / (2.0 * math.sqrt(params.a_max * params.b_comfort)))
        a -= params.a_max * (s_star / gap) ** 2
    b_hard = params.b_hard_ratio * params.a_max
    return min(max(a, -b_hard), params.a_max)


def _box_occupancy(px, py, vx, vy, half):
    """Time window during which p + v*tau lies in the square [-half, half]^2.

    Returns (tau_in, tau_out) with tau_in >= 0, or None if the extrapolation
    never enters the square.  A (near-)stationary point inside occupies it
    forever.
    """
    lo, hi = 0.0, math.inf
    for p, v in ((px, vx), (py, vy)):
        if abs(v) < 1e-12:
            if abs(p) > half:
                return None
        else:
            t1, t2 = (-half - p) / v, (half - p) / v
            if t1 > t2:
                t1, t2 = t2, t1
            lo, hi = max(lo, t1), min(hi, t2)
    return (lo, hi) if lo <= hi else None


def ego_policy(obs: Observation, ego: VehicleState, params: IdmParams,
               cfg: WorldConfig) -> float:
    """Fixed ego policy: IDM along the planned route, yielding at the box entry.

    The observed intruder becomes an in-path leader when it projects onto the
    route ahead within a lateral tolerance.  Otherwise, while the ego has not
    entered the intersection box, it compares its own crossing window against
    the observed intruder's constant-velocity occupancy of the (expanded) box;
    on overlap it yields to a standing virtual leader just short of the entry.
    Once inside the box the ego is committed and only the in-path rule acts.
    """
    ex, ey = ego.position()
    eh = ego.route.heading(ego.s)
    evx, evy = ego.speed * math.cos(eh), ego.speed * math.sin(eh)
    px, py = ex + obs.rx, ey + obs.ry
    pvx, pvy = evx + obs.rvx, evy + obs.rvy

    # in-path leader (car following, merging, blocked lane)
    s_hat, lat = ego.route.project(px, py)
    if lat <= cfg.conflict_lateral_tol and s_hat > ego.s + 1e-9:
        th = ego.route.heading(s_hat)
        v_lead = max(0.0, pvx * math.cos(th) + pvy * math.sin(th))
        gap = max(s_hat - ego.s - cfg.vehicle_length, 1e-6)
        return idm_acceleration(ego.speed, v_lead, gap, params)

    # yield decision before entering the intersection box
    if ego.s < ego.route.box_entry_s:
        occ = _box_occupancy(px, py, pvx, pvy,
                             cfg.lane_width + cfg.conflict_box_margin)
        if occ is not None:
            half_len = cfg.vehicle_length / 2.0
            v_eff = max(ego.speed, cfg.conflict_speed_floor)
            t_in = (ego.route.box_entry_s - ego.s - half_len) / v_eff
            t_out = (ego.route.box_exit_s - ego.s + half_len) / v_eff
            m = cfg.conflict_time_margin
            if occ[0] - m < t_out and occ[1] + m > t_in:
                stop_target = ego.route.box_entry_s - cfg.conflict_standoff
                gap = max(stop_target - ego.s, 1e-6)
                return idm_acceleration(ego.speed, 0.0, gap, params)

    return idm_acceleration(ego.speed, None, math.inf, params)


def intruder_acceleration(world: WorldState, cfg: WorldConfig) -> float:
    """Blind intruder: IDM car-following of the true ego when it is in path."""
    intr = world.intruder
    ex, ey = world.ego.position()
    s_hat, lat = intr.route.project(ex, ey)
    if lat <= cfg.conflict_lateral_tol and s_hat > intr.s + 1e-9:
        evx, evy = world.ego.velocity()
        th = intr.route.heading(s_hat)
        v_lead = max(0.0, evx * math.cos(th) + evy * math.sin(th))
        gap = max(s_hat - intr.s - cfg.vehicle_length, 1e-6)
        return idm_acceleration(intr.speed, v_lead, gap, world.intruder_params)
    return idm_acceleration(intr.speed, None, math.inf, world.intruder_params)


def separating_distance(ego: VehicleState, intruder: VehicleState,
                        cfg: WorldConfig) -> float:
    """Distance between the two oriented vehicle rectangles (0 iff contact)."""
    return rect_distance(ego.pose(), intruder.pose(),
                         cfg.vehicle_length, cfg.vehicle_width)


def step_world(world: WorldState, ego_accel: float, intruder_accel: float,
               cfg: WorldConfig) -> float:
    """Advance one policy step with semi-implicit Euler substeps.

    Accelerations are held constant across substeps.  Speeds are integrated
    then clamped at zero before positions advance.  Returns the minimum
    separation seen at substep boundaries; on contact the world freezes with
    collided set.
    """
    dt = cfg.policy_dt / cfg.substeps
    min_sep = math.inf
    for _ in range(cfg.substeps):
        if world.collided:
            return 0.0
        e, i = world.ego, world.intruder
        e.speed = max(0.0, e.speed + ego_accel * dt)
        e.s += e.speed * dt
        i.speed = max(0.0, i.speed + intruder_accel * dt)
        i.s += i.speed * dt
        sep = separating_distance(e, i, cfg)
        if sep <= 0.0:
            world.collided = True
            return 0.0
        min_sep = min(min_sep, sep)
    return min_sep


def spawn_vehicle(branch: Branch, turn: Turn, distance: float, speed: float,
                  cfg: WorldConfig) -> VehicleState:
    route = route_for(branch, turn, cfg.lane_width, cfg.approach_length,
                      cfg.exit_length)
    s = max(cfg.approach_length - distance, 0.0)
    return VehicleState(route, s, speed)


def relative_initial_state(scenario: Branch, d_ego: float, v_ego: float,
                           d_intr: float, v_intr: float,
                           cfg: WorldConfig) -> np.ndarray:
    """Map absolute spawn values to the relative state [x0, y0, vx0, vy0]."""
    ego = spawn_vehicle(Branch.SOUTH, Turn.STRAIGHT, d_ego, v_ego, cfg)
    intr = spawn_vehicle(scenario, Turn.STRAIGHT, d_intr, v_intr, cfg)
    ex, ey = ego.position()
    ix, iy = intr.position()
    evx, evy = ego.velocity()
    ivx, ivy = intr.velocity()
    return np.array([ix - ex, iy - ey, ivx - evx, ivy - evy], dtype=np.float64)


def _anchor(rng_val: float, own_range, other_range, offset: float,
            sign: float) -> float:
    """Draw the intruder-side anchor value of a degenerate relative state.

    The relative state pins only `own = sign * (other - offset)`, so the
    anchor is drawn uniformly over the values keeping both absolute
    quantities in their configured ranges (nonempty whenever the relative
    state came from in-range spawns); otherwise the nearest in-range value.
    """
    a = sign * (other_range[0] - offset)
    b = sign * (other_range[1] - offset)
    lo = max(own_range[0], min(a, b))
    hi = min(own_range[1], max(a, b))
    if lo > hi:
        return min(max((min(a, b) + max(a, b)) / 2.0, own_range[0]),
                   own_range[1])
    return lo + rng_val * (hi - lo)


def init_world(s0: np.ndarray, scenario: Branch, behavior_seed: int,
               cfg: WorldConfig) -> WorldState:
    """Reconstruct a world consistent with the relative state s0.

    For the crossing scenarios (west, east) the relative state determines the
    spawn uniquely.  For the degenerate same-axis scenarios (south, north)
    only sums/differences of the absolute values are pinned; the split is
    drawn from the behavior stream, restricted so both vehicles stay inside
    their configured spawn ranges.  This residual randomness is part of the
    episode behavior, like destinations and the IDM exponent.
    """
    rng = stream(behavior_seed)
    u = rng.random(5)  # fixed draw order: d_intr, v_intr, ego turn, intr turn, delta
    x0, y0, vx0, vy0 = (float(v) for v in s0)
    h = cfg.lane_width / 2.0

    if scenario is Branch.WEST:
        d_i, v_i = -x0 - 3.0 * h, vx0
        d_e, v_e = y0 - h, -vy0
    elif scenario is Branch.EAST:
        d_i, v_i = x0 - h, -vx0
        d_e, v_e = y0 - 3.0 * h, -vy0
    elif scenario is Branch.SOUTH:
        # y0 = d_e - d_i  =>  d_i = d_e - y0;  vy0 = v_i - v_e  =>  v_i = v_e + vy0
        d_i = _anchor(u[0], cfg.intruder_distance_range, cfg.ego_distance_range,
                      y0, 1.0)
        v_i = _anchor(u[1], cfg.intruder_speed_range, cfg.ego_speed_range,
                      -vy0, 1.0)
        d_e, v_e = y0 + d_i, v_i - vy0
    else:  # NORTH: y0 = 4h + d_e + d_i  =>  d_i = (y0 - 4h) - d_e;  v_i = -vy0 - v_e
        d_i = _anchor(u[0], cfg.intruder_distance_range, cfg.ego_distance_range,
                      y0 - 4.0 * h, -1.0)
        v_i = _anchor(u[1], cfg.intruder_speed_range, cfg.ego_speed_range,
                      -vy0, -1.0)
        d_e, v_e = y0 - 4.0 * h - d_i, -vy0 - v_i

    d_e = max(d_e, cfg.min_spawn_distance)
    d_i = max(d_i, cfg.min_spawn_distance)
    v_e, v_i = max(v_e, 0.0), max(v_i, 0.0)

    ego_turn = Turn(1 + int(u[2] * 3.0))
    intr_turn = Turn(1 + int(u[3] * 3.0))
    d_lo, d_hi = cfg.intruder_delta_range
    delta = d_lo + u[4] * (d_hi - d_lo)

    ego = spawn_vehicle(Branch.SOUTH, ego_turn, d_e, v_e, cfg)
    intr = spawn_vehicle(scenario, intr_turn, d_i, v_i, cfg)
    ego_params = replace(cfg.idm_ego, v0=max(v_e, 1e-3))
    intr_params = replace(cfg.idm_intruder, v0=max(v_i, 1e-3), delta=delta)
    return WorldState(ego, intr, ego_params, intr_params)


def true_relative_state(world: WorldState) -> np.ndarray:
    ex, ey = world.ego.position()
    ix, iy = world.intruder.position()
    evx, evy = world.ego.velocity()
    ivx, ivy = world.intruder.velocity()
    return np.array([ix - ex, iy - ey, ivx - evx, ivy - evy], dtype=np.float64)


def run_simulation(s0: np.ndarray, eps: np.ndarray, scenario: Branch,
                   behavior_seed: int, cfg: WorldConfig) -> SimulationResult:
    """Run one episode; pure function of its arguments.

    eps must have shape (horizon_steps - 1, 4) with channels
    [err_x, err_y, err_vx, err_vy] added to the ego's relative observation.
    The robustness is the minimum separation over the recorded steps; after
    the first contact both vehicles freeze and the separation stays 0.
    """
    eps = np.asarray(eps, dtype=np.float64)
    n_actions = cfg.horizon_steps - 1
    if eps.shape != (n_actions, 4):
        raise ValueError(f"noise sequence must have shape ({n_actions}, 4), "
                         f"got {eps.shape}")
    world = init_world(np.asarray(s0, dtype=np.float64), scenario,
                       behavior_seed, cfg)

    states = np.empty((cfg.horizon_steps, 7), dtype=np.float64)

    def record(t, sep):
        ex, ey = world.ego.position()
        ix, iy = world.intruder.position()
        states[t] = (ex, ey, world.ego.speed, ix, iy, world.intruder.speed, sep)

    sep = separating_distance(world.ego, world.intruder, cfg)
    if sep <= 0.0:
        world.collided, sep = True, 0.0
    record(0, sep)

    for t in range(1, cfg.horizon_steps):
        if not world.collided:
            rel = true_relative_state(world)
            e = eps[t - 1]
            obs = Observation(rel[0] + e[0], rel[1] + e[1],
                              rel[2] + e[2], rel[3] + e[3])
            a_ego = ego_policy(obs, world.ego, world.ego_params, cfg)
            a_intr = intruder_acceleration(world, cfg)
            sep = step_world(world, a_ego, a_intr, cfg)
        else:
            sep = 0.0
        record(t, sep)

    rho = max(float(states[:, 6].min()), 0.0)
    world_delta = world.intruder_params.delta
    ego_turn = world.ego.route.turn
    intr_turn = world.intruder.route.turn
    return SimulationResult(states=states, rho=rho, collided=bool(rho == 0.0),
                            scenario=scenario, behavior_seed=int(behavior_seed),
                            ego_turn=ego_turn, intruder_turn=intr_turn,
                            intruder_delta=float(world_delta))


def export_trajectory(result: SimulationResult, path) -> None:
    """Write one JSON record per step: {t, ego:{x,y,v}, intruder:{x,y,v}, sep}."""
    with open(path, "w") as f:
        for t, row in enumerate(result.states):
            rec = {"t": t,
                   "ego": {"x": row[0], "y": row[1], "v": row[2]},
                   "intruder": {"x": row[3], "y": row[4], "v": row[5]},
                   "sep": row[6]}
            f.write(json.dumps(rec) + "\n")
