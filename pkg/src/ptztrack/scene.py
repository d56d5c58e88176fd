"""Virtual world: object catalog, tracking scenarios, and stochastic
kinematics inside a 70 m x 70 m field with reflecting boundaries."""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

FIELD_SIZE = 70.0
NUM_BACKGROUNDS = 25

VEHICLE_TYPES = ("SUV1", "SUV2", "Pickup", "Sports", "HatchBack", "Truck")
COLORS = ("blue", "red", "grey", "green", "white", "black")

# Length x width x height in meters; typical road-vehicle proportions.
VEHICLE_DIMS = {
    "SUV1": (4.6, 1.9, 1.8),
    "SUV2": (4.8, 2.0, 1.9),
    "Pickup": (5.3, 2.0, 1.9),
    "Sports": (4.4, 1.9, 1.2),
    "HatchBack": (4.0, 1.8, 1.5),
    "Truck": (6.5, 2.4, 2.6),
}
HUMAN_DIMS = (0.5, 0.5, 1.75)
TREE_TRUNK_DIMS = (0.4, 0.4, 3.0)
TREE_CANOPY_DIMS = (2.5, 2.5, 3.0)

VEHICLE_MEAN_SPEED = 6.0
VEHICLE_MAX_SPEED = 16.0
HUMAN_MEAN_SPEED = 1.4
HUMAN_MAX_SPEED = 2.5

# Heading/speed random-walk parameters (per second; scaled by dt each step).
HEADING_WALK_SIGMA = 15.0   # degrees/s
SPEED_WALK_SIGMA = 1.0      # m/s per second
SPEED_REVERSION_RATE = 0.2  # 1/s pull toward the mean speed

SUBCLASS_VEHICLE = 0
SUBCLASS_HUMAN = 1

SCENARIO_IDS = ("sc0_static", "sc1", "sc2", "sc3", "sc4", "sc5", "dt")

# Human characters available for the dynamic-tasking sub-class; colors are
# assigned per character so they stay distinguishable in grayscale.
HUMAN_COLORS = ("red", "green", "white", "black")


@dataclass(frozen=True)
class ObjectSpec:
    """Immutable description of one scene object."""

    id: int
    kind: str                      # vehicle | human | tree
    vehicle_type: str | None = None
    color_id: str | None = None
    dims: tuple[float, float, float] = (1.0, 1.0, 1.0)
    trackable: bool = False
    subclass_id: int | None = None

    def __post_init__(self):
        if any(d <= 0 for d in self.dims):
            raise ValueError("dims must be positive")
        if self.trackable and (self.color_id is None or self.subclass_id is None):
            raise ValueError("trackable objects need a color and a subclass")


@dataclass
class ObjectState:
    """Mutable pose of one object: ground position, heading, speed."""

    position: tuple[float, float]
    heading: float = 0.0
    speed: float = 0.0
    stalled: bool = False  # hit a boundary last step; redraw heading next step


@dataclass(frozen=True)
class ScenarioSpec:
    """One tracking scenario: what can be tracked and which scene
    variations are enabled."""

    id: str
    trackable_catalog: tuple = ()
    background_mode: str = "fixed"      # fixed | variable
    trees_enabled: bool = False
    humans_enabled: bool = False
    augmentations_enabled: bool = False
    dt_enabled: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id,
            "trackable_catalog": [list(e) for e in self.trackable_catalog],
            "background_mode": self.background_mode,
            "trees_enabled": self.trees_enabled,
            "humans_enabled": self.humans_enabled,
            "augmentations_enabled": self.augmentations_enabled,
            "dt_enabled": self.dt_enabled,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        d = json.loads(text)
        return cls(
            id=d["id"],
            trackable_catalog=tuple(tuple(e) for e in d["trackable_catalog"]),
            background_mode=d["background_mode"],
            trees_enabled=bool(d["trees_enabled"]),
            humans_enabled=bool(d["humans_enabled"]),
            augmentations_enabled=bool(d["augmentations_enabled"]),
            dt_enabled=bool(d.get("dt_enabled", False)),
        )


def _catalog(*entries):
    return tuple(entries)


_SC45_FLAGS = dict(background_mode="variable", trees_enabled=True,
                   humans_enabled=True, augmentations_enabled=True)

SCENARIOS = {
    # Desk-scale debug scenario: one stationary vehicle, plain scene.
    "sc0_static": ScenarioSpec("sc0_static", _catalog(("SUV1", "blue"))),
    "sc1": ScenarioSpec("sc1", _catalog(("SUV1", "blue"))),
    "sc2": ScenarioSpec("sc2", _catalog(("SUV1", "blue")),
                        trees_enabled=True, augmentations_enabled=True),
    "sc3": ScenarioSpec("sc3", _catalog(("SUV1", "blue")),
                        background_mode="variable", trees_enabled=True,
                        augmentations_enabled=True),
    "sc4": ScenarioSpec("sc4", _catalog(("SUV1", "blue"), ("SUV1", "red"),
                                        ("SUV1", "grey")), **_SC45_FLAGS),
    "sc5": ScenarioSpec("sc5", _catalog(("SUV1", "blue"), ("SUV1", "red"),
                                        ("Pickup", "grey"), ("Pickup", "red"),
                                        ("Sports", "blue"), ("Sports", "grey")),
                        **_SC45_FLAGS),
    # Dynamic tasking: one vehicle plus one of four human characters; the
    # contextual input selects which sub-class earns reward.
    "dt": ScenarioSpec("dt", _catalog(("SUV1", "blue")),
                       background_mode="variable", trees_enabled=True,
                       augmentations_enabled=True, dt_enabled=True),
}

EVAL_VARIATIONS = ("as_trained", "fixed_bg", "var_bg_trees",
                   "var_bg_trees_humans", "multi_target")


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; valid: {sorted(SCENARIOS)}")


def make_stream(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-purpose random stream derived from (seed, name)."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), key])))


@dataclass
class WorldState:
    """Everything that defines the scene at one instant."""

    scenario: ScenarioSpec
    seed: int
    objects: list  # list of (ObjectSpec, ObjectState)
    background_id: int
    target_id: int
    sim_time: float = 0.0
    _streams: dict = field(default_factory=dict, repr=False)

    def rng(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = make_stream(self.seed, name)
        return self._streams[name]

    def find(self, object_id: int):
        for spec, state in self.objects:
            if spec.id == object_id:
                return spec, state
        raise KeyError(f"no object with id {object_id}")

    @property
    def target(self):
        return self.find(self.target_id)

    def trackables(self):
        return [(s, st) for s, st in self.objects if s.trackable]

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    def signature(self):
        """Comparable snapshot of every field including stream states;
        two worlds that evolved identically have equal signatures."""
        objs = tuple(
            (spec, st.position, st.heading, st.speed, st.stalled)
            for spec, st in self.objects
        )
        streams = tuple(sorted(
            (name, json.dumps(g.bit_generator.state, sort_keys=True))
            for name, g in self._streams.items()
        ))
        return (self.scenario.id, self.seed, objs, self.background_id,
                self.target_id, self.sim_time, streams)


def _vehicle_spec(obj_id, vtype, color, trackable=True):
    return ObjectSpec(id=obj_id, kind="vehicle", vehicle_type=vtype,
                      color_id=color, dims=VEHICLE_DIMS[vtype],
                      trackable=trackable, subclass_id=SUBCLASS_VEHICLE)


def _human_spec(obj_id, character, trackable):
    color = HUMAN_COLORS[character % len(HUMAN_COLORS)]
    return ObjectSpec(id=obj_id, kind="human", color_id=color, dims=HUMAN_DIMS,
                      trackable=trackable,
                      subclass_id=SUBCLASS_HUMAN if trackable else None)


def _tree_spec(obj_id):
    return ObjectSpec(id=obj_id, kind="tree", dims=TREE_TRUNK_DIMS)


def _place(rng, existing, min_sep=4.0, margin=2.0, tries=200):
    """Random ground position keeping min_sep meters from existing objects."""
    for _ in range(tries):
        pos = tuple(rng.uniform(margin, FIELD_SIZE - margin, size=2))
        if all((pos[0] - q[0]) ** 2 + (pos[1] - q[1]) ** 2 >= min_sep ** 2
               for q in existing):
            return pos
    return pos  # crowded fallback; overlap is tolerated visually


def build_scenario(spec: ScenarioSpec, seed: int) -> WorldState:
    """Populate a world from a scenario spec; all placement comes from the
    seed's named streams so identical calls are bit-identical."""
    world = WorldState(scenario=spec, seed=seed, objects=[],
                       background_id=0, target_id=0)
    rng = world.rng("placement")

    if spec.background_mode == "variable":
        world.background_id = int(world.rng("background").integers(0, NUM_BACKGROUNDS))

    positions = []
    next_id = 0

    def add(obj_spec, speed_mean, moving=True):
        nonlocal next_id
        pos = _place(rng, positions)
        positions.append(pos)
        heading = float(rng.uniform(0.0, 360.0))
        speed = speed_mean if (moving and spec.id != "sc0_static") else 0.0
        world.objects.append((obj_spec, ObjectState(pos, heading, speed)))
        next_id += 1

    vtype, color = spec.trackable_catalog[int(rng.integers(0, len(spec.trackable_catalog)))]
    target_spec = _vehicle_spec(next_id, vtype, color)
    add(target_spec, VEHICLE_MEAN_SPEED)
    world.target_id = target_spec.id

    if spec.dt_enabled:
        character = int(rng.integers(0, len(HUMAN_COLORS)))
        add(_human_spec(next_id, character, trackable=True), HUMAN_MEAN_SPEED)

    if spec.trees_enabled:
        for _ in range(int(rng.integers(2, 7))):
            add(_tree_spec(next_id), 0.0, moving=False)

    if spec.humans_enabled:
        for i in range(int(rng.integers(1, 4))):
            add(_human_spec(next_id, i, trackable=False), HUMAN_MEAN_SPEED)

    return world


def reposition_target(world: WorldState) -> None:
    """Redraw the target's ground position (used until it lands in view)."""
    _, state = world.target
    others = [st.position for sp, st in world.objects if sp.id != world.target_id]
    state.position = _place(world.rng("placement"), others)


def retarget_subclass(world: WorldState, subclass_id: int) -> None:
    """Point the reward target at the trackable of the given sub-class."""
    for spec, _ in world.trackables():
        if spec.subclass_id == subclass_id:
            world.target_id = spec.id
            return
    raise ValueError(f"no trackable with subclass {subclass_id}")


def _mean_max_speed(kind: str) -> tuple[float, float]:
    if kind == "human":
        return HUMAN_MEAN_SPEED, HUMAN_MAX_SPEED
    return VEHICLE_MEAN_SPEED, VEHICLE_MAX_SPEED


def _inward_heading(rng, pos) -> float:
    """Uniform heading whose direction points back into the field."""
    x, y = pos
    while True:
        h = float(rng.uniform(0.0, 360.0))
        dx = np.sin(np.radians(h))
        dy = np.cos(np.radians(h))
        ok = True
        if x <= 0.0 and dx <= 0:
            ok = False
        if x >= FIELD_SIZE and dx >= 0:
            ok = False
        if y <= 0.0 and dy <= 0:
            ok = False
        if y >= FIELD_SIZE and dy >= 0:
            ok = False
        if ok:
            return h


def step_world(world: WorldState, dt: float) -> None:
    """Advance every moving object by dt seconds, in place.

    Vehicles and humans follow a heading/speed random walk with a
    mean-reverting pull; on boundary contact they stop for one step, then
    resume with a fresh heading into the field. Trees never move.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    world.sim_time += dt
    if world.scenario.id == "sc0_static":
        return
    rng = world.rng("motion")
    for spec, st in world.objects:
        if spec.kind == "tree":
            continue
        mean_speed, max_speed = _mean_max_speed(spec.kind)

        if st.stalled:
            st.heading = _inward_heading(rng, st.position)
            st.speed = float(rng.uniform(0.6, 1.2)) * mean_speed
            st.stalled = False

        st.heading = (st.heading + rng.normal(0.0, HEADING_WALK_SIGMA * dt)) % 360.0
        st.speed += SPEED_REVERSION_RATE * (mean_speed - st.speed) * dt
        st.speed += rng.normal(0.0, SPEED_WALK_SIGMA * dt)
        st.speed = float(np.clip(st.speed, 0.0, max_speed))

        h = np.radians(st.heading)
        x = st.position[0] + st.speed * dt * np.sin(h)
        y = st.position[1] + st.speed * dt * np.cos(h)
        if not (0.0 <= x <= FIELD_SIZE and 0.0 <= y <= FIELD_SIZE):
            x = float(np.clip(x, 0.0, FIELD_SIZE))
            y = float(np.clip(y, 0.0, FIELD_SIZE))
            st.speed = 0.0
            st.stalled = True
        st.position = (float(x), float(y))


def eval_variation(world: WorldState, mode: str) -> WorldState:
    """Override scene composition for one of the evaluation columns.

    Returns a new world; the input is untouched. Draws, when needed, come
    from the world's own streams so the result is deterministic per seed.
    """
    if mode not in EVAL_VARIATIONS:
        raise KeyError(f"unknown variation {mode!r}; valid: {EVAL_VARIATIONS}")
    if mode == "as_trained":
        return world
    w = world.copy()
    rng = w.rng("variation")

    def drop(kinds, keep_trackable=True):
        w.objects = [(sp, st) for sp, st in w.objects
                     if sp.kind not in kinds or (keep_trackable and sp.trackable)]

    def ensure_trees():
        if not any(sp.kind == "tree" for sp, _ in w.objects):
            positions = [st.position for _, st in w.objects]
            base = max(sp.id for sp, _ in w.objects) + 1
            for i in range(int(rng.integers(2, 7))):
                pos = _place(rng, positions)
                positions.append(pos)
                w.objects.append((_tree_spec(base + i), ObjectState(pos)))

    def ensure_humans():
        if not any(sp.kind == "human" and not sp.trackable for sp, _ in w.objects):
            positions = [st.position for _, st in w.objects]
            base = max(sp.id for sp, _ in w.objects) + 1
            for i in range(int(rng.integers(1, 4))):
                pos = _place(rng, positions)
                positions.append(pos)
                st = ObjectState(pos, float(rng.uniform(0, 360)), HUMAN_MEAN_SPEED)
                w.objects.append((_human_spec(base + i, i, trackable=False), st))

    def drop_competing_trackables():
        # single-object-of-interest columns: only the target stays
        w.objects = [(sp, st) for sp, st in w.objects
                     if not sp.trackable or sp.id == w.target_id]

    if mode == "fixed_bg":
        w.background_id = 0
        drop(("tree", "human"))
        drop_competing_trackables()
        w.scenario = replace(w.scenario, background_mode="fixed",
                             trees_enabled=False, humans_enabled=False,
                             augmentations_enabled=False)
    elif mode == "var_bg_trees":
        if w.scenario.background_mode != "variable":
            w.background_id = int(rng.integers(0, NUM_BACKGROUNDS))
        drop(("human",))
        drop_competing_trackables()
        ensure_trees()
        w.scenario = replace(w.scenario, background_mode="variable",
                             trees_enabled=True, humans_enabled=False)
    elif mode == "var_bg_trees_humans":
        if w.scenario.background_mode != "variable":
            w.background_id = int(rng.integers(0, NUM_BACKGROUNDS))
        ensure_trees()
        ensure_humans()
        w.scenario = replace(w.scenario, background_mode="variable",
                             trees_enabled=True, humans_enabled=True)
    elif mode == "multi_target":
        target_spec, target_state = w.target
        catalog = [e for e in w.scenario.trackable_catalog
                   if e != (target_spec.vehicle_type, target_spec.color_id)]
        if not catalog:
            # single-entry catalog: duplicate the vehicle in another color
            other = next(c for c in COLORS if c != target_spec.color_id)
            catalog = [(target_spec.vehicle_type, other)]
        vtype, color = catalog[int(rng.integers(0, len(catalog)))]
        base = max(sp.id for sp, _ in w.objects) + 1
        positions = [st.position for _, st in w.objects]
        pos = _place(rng, positions)
        st = ObjectState(pos, float(rng.uniform(0, 360)),
                         0.0 if w.scenario.id == "sc0_static" else VEHICLE_MEAN_SPEED)
        w.objects.append((_vehicle_spec(base, vtype, color), st))
    return w
