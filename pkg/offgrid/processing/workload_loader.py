import struct
from dataclasses import dataclass, field

from offgrid import config
from offgrid.core.errors import ConfigError
from offgrid.core.object_model import ObjectGraph, ObjectNode
from offgrid.processing import kernels
from offgrid.processing.splitmix import SplitMix64, mix64, stream_bytes
from offgrid.runtime.decision import calibration_work
from offgrid.runtime.tasks import TaskDescriptor
from offgrid.utils.logger_setup import log_debug

log_debug("processing.workload_loader module initialized.")

# --- Task ids ---
CALIBRATION_TASK = 0
GAME_TREE_TASK = 1
LINSOLVE_TASK = 2
BLOB_DETECT_TASK = 3
BLOB_DETECT_ONE_TASK = 4
PI_MACHIN_TASK = 5
PI_MACHIN_DOUBLE_TASK = 105

# --- Class ids ---
GAME_CLASS = 1
ENGINE_CLASS = 2
SYSTEM_CLASS = 3
ALBUM_CLASS = 4
BLOB_CLASS = 5
SELECTION_CLASS = 6
PI_CLASS = 7
CALIBRATION_CLASS = 8

BLOB_HEADER = 16

_GAME = struct.Struct('>QIqI')     # position key, ply, last score, last move
_ENGINE = struct.Struct('>I')      # search depth
_SYSTEM = struct.Struct('>IIQ')    # n, k, seed
_ALBUM = struct.Struct('>II')      # rounds, blob count
_PI = struct.Struct('>I')          # digits
_U32 = struct.Struct('>I')
_U64 = struct.Struct('>Q')


@dataclass
class WorkloadSpec:
    name: str
    seed: int = config.DEFAULT_SEED
    scale: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in AVAILABLE_WORKLOADS:
            raise ConfigError(f"unknown workload '{self.name}' (expected one of {', '.join(AVAILABLE_WORKLOADS)})")
        merged = dict(AVAILABLE_WORKLOADS[self.name]["scale"])
        unknown = set(self.scale) - set(merged)
        if unknown:
            raise ConfigError(f"workload {self.name} has no scale parameter {', '.join(sorted(unknown))}")
        merged.update({k: v for k, v in self.scale.items() if v is not None})
        self.scale = merged
        self.seed &= 0xFFFFFFFFFFFFFFFF
        for key, value in self.scale.items():
            low, high = _LIMITS[key]
            if not isinstance(value, int) or not low <= value <= high:
                raise ConfigError(f"{self.name}: {key} must be an integer in [{low}, {high}], got {value!r}")

    @property
    def task_id(self):
        return AVAILABLE_WORKLOADS[self.name]["task_id"]

    @property
    def invocations(self):
        """Invocations that make up one trial (the moves of a game, otherwise one)."""
        return self.scale.get("moves", 1)

    @property
    def warmable(self):
        """Whether the graph holds proxyable nodes a warm cache can elide."""
        return self.name in ("blob_detect", "blob_detect_1ofN")


_LIMITS = {
    "depth": (1, config.MAX_GAME_DEPTH),
    "moves": (1, 1000),
    "n": (2, 1024),
    "k": (1, 1_000_000),
    "count": (1, 10_000),
    "blob_bytes": (1, 64 * 1024 * 1024),
    "rounds": (1, 10_000),
    "digits": (1, 200_000),
}


def _guids(seed, salt):
    return SplitMix64(mix64(seed ^ salt))


# --- Graph builders ---

def build_game_tree(spec):
    ids = _guids(spec.seed, 0x6A3E)
    game = ObjectNode(ids.guid(), GAME_CLASS, _GAME.pack(mix64(spec.seed), 0, 0, 0))
    engine = ObjectNode(ids.guid(), ENGINE_CLASS, _ENGINE.pack(spec.scale["depth"]))
    return ObjectGraph([game, engine]), game.guid, [engine.guid]


def build_linsolve(spec):
    ids = _guids(spec.seed, 0x11A5)
    system = ObjectNode(ids.guid(), SYSTEM_CLASS, _SYSTEM.pack(spec.scale["n"], spec.scale["k"], spec.seed))
    return ObjectGraph([system]), system.guid, []


def build_blobs(spec):
    count, size = spec.scale["count"], spec.scale["blob_bytes"]
    ids = _guids(spec.seed, 0xB10B)
    album_guid = ids.guid()
    blobs = []
    for index in range(count):
        image = stream_bytes(mix64(spec.seed + index + 1), size)
        blobs.append(ObjectNode(ids.guid(), BLOB_CLASS, bytes(BLOB_HEADER) + image, proxyable=True))
    album = ObjectNode(album_guid, ALBUM_CLASS, _ALBUM.pack(spec.scale["rounds"], count),
                       [b.guid for b in blobs])
    if spec.name == "blob_detect_1ofN":
        selected = [count - 1]
    else:
        selected = list(range(count))
    selection = ObjectNode(ids.guid(), SELECTION_CLASS, b''.join(_U32.pack(i) for i in selected))
    graph = ObjectGraph([album, *blobs, selection])
    return graph, album.guid, [selection.guid]


def build_pi(spec):
    ids = _guids(spec.seed, 0x314)
    node = ObjectNode(ids.guid(), PI_CLASS, _PI.pack(spec.scale["digits"]))
    return ObjectGraph([node]), node.guid, []


def build_calibration(units=config.CALIBRATION_UNITS):
    node = ObjectNode(SplitMix64(0xCA11).guid(), CALIBRATION_CLASS, _U64.pack(units))
    return ObjectGraph([node]), node.guid, []


def build_graph(spec):
    """(graph, target_root, param_roots) for a workload spec."""
    graph, target, params = AVAILABLE_WORKLOADS[spec.name]["builder"](spec)
    log_debug(f"Built {spec.name} graph: {len(graph)} nodes")
    return graph, target, params


# --- Task bodies (shared by client and server) ---

def play_move(ctx):
    key, ply, _, _ = _GAME.unpack(ctx.payload(ctx.target_root))
    (depth,) = _ENGINE.unpack(ctx.payload(ctx.param_roots[0]))
    search = kernels.NegamaxSearch()
    score, move = search.best_move(key, depth)
    ctx.charge(search.nodes * kernels.GAME_NODE_UNITS)
    ctx.store(ctx.target_root, _GAME.pack(kernels.child_key(key, move), ply + 1, score, move))
    return struct.pack('>qI', score, move)


def solve_system(ctx):
    n, k, seed = _SYSTEM.unpack(ctx.payload(ctx.target_root))
    a, b = kernels.make_system(seed, n)
    residual = 0.0
    for _ in range(k):
        x = kernels.gauss_solve(a, b)
        residual = kernels.residual_norm(a, x, b)
        ctx.charge(kernels.linsolve_flops(n))
    return struct.pack('>dQ', residual, int(kernels.linsolve_flops(n, k)))


def _selection(ctx):
    data = ctx.payload(ctx.param_roots[0])
    return [_U32.unpack_from(data, i)[0] for i in range(0, len(data), 4)]


def detect_blobs(ctx):
    album = ctx.load(ctx.target_root)
    rounds, _ = _ALBUM.unpack(album.payload)
    blob_refs = list(album.refs)
    selected = _selection(ctx)
    for index in selected:
        guid = blob_refs[index]
        image = ctx.payload(guid)[BLOB_HEADER:]
        digest = kernels.detection_digest(image, rounds)
        ctx.charge(len(image) * rounds)
        ctx.store(guid, digest + image)
    return _U32.pack(len(selected))


def _pi_digits(ctx, factor):
    (digits,) = _PI.unpack(ctx.payload(ctx.target_root))
    digits *= factor
    text = kernels.machin_pi(digits)
    ctx.charge(kernels.machin_units(digits))
    return text.encode('ascii')


def compute_pi(ctx):
    return _pi_digits(ctx, 1)


def compute_pi_double(ctx):
    return _pi_digits(ctx, 2)


def run_calibration(ctx):
    (units,) = _U64.unpack(ctx.payload(ctx.target_root))
    digest = calibration_work(units)
    ctx.charge(units)
    return digest


# --- Hints ---

def _album_parts(graph, target_root, param_roots):
    album = graph.node(target_root)
    data = graph.node(param_roots[0]).payload
    selected = [_U32.unpack_from(data, i)[0] for i in range(0, len(data), 4)]
    return album, selected


def _blob_units(graph, target_root, param_roots):
    album, selected = _album_parts(graph, target_root, param_roots)
    rounds, _ = _ALBUM.unpack(album.payload)
    return sum((len(graph.node(album.refs[i]).payload) - BLOB_HEADER) * rounds for i in selected)


def _blob_down(graph, target_root, param_roots):
    album, selected = _album_parts(graph, target_root, param_roots)
    return sum(len(graph.node(album.refs[i]).payload) + config.PROXY_OVERHEAD for i in selected)


def _blob_order(graph, target_root, param_roots):
    return list(graph.node(target_root).refs)


def _game_units(graph, target_root, param_roots):
    (depth,) = _ENGINE.unpack(graph.node(param_roots[0]).payload)
    return config.GAME_BRANCHING ** depth * kernels.GAME_NODE_UNITS


def _linsolve_units(graph, target_root, param_roots):
    n, k, _ = _SYSTEM.unpack(graph.node(target_root).payload)
    return kernels.linsolve_flops(n, k)


def _pi_units(graph, target_root, param_roots):
    (digits,) = _PI.unpack(graph.node(target_root).payload)
    return kernels.machin_units(digits)


def _calibration_units(graph, target_root, param_roots):
    return _U64.unpack(graph.node(target_root).payload)[0]


# --- Registry ---

AVAILABLE_WORKLOADS = {
    "game_tree": {"task_id": GAME_TREE_TASK, "builder": build_game_tree, "impl": play_move,
                  "scale": {"depth": config.DEFAULT_GAME_DEPTH, "moves": config.DEFAULT_GAME_MOVES}},
    "linsolve": {"task_id": LINSOLVE_TASK, "builder": build_linsolve, "impl": solve_system,
                 "scale": {"n": config.DEFAULT_LINSOLVE_N, "k": config.DEFAULT_LINSOLVE_K}},
    "blob_detect": {"task_id": BLOB_DETECT_TASK, "builder": build_blobs, "impl": detect_blobs,
                    "scale": {"count": config.DEFAULT_BLOB_COUNT, "blob_bytes": config.DEFAULT_BLOB_BYTES,
                              "rounds": config.DEFAULT_BLOB_ROUNDS}},
    "blob_detect_1ofN": {"task_id": BLOB_DETECT_ONE_TASK, "builder": build_blobs, "impl": detect_blobs,
                         "scale": {"count": config.DEFAULT_BLOB_COUNT, "blob_bytes": config.DEFAULT_BLOB_BYTES,
                                   "rounds": config.DEFAULT_BLOB_ROUNDS}},
    "pi_machin": {"task_id": PI_MACHIN_TASK, "builder": build_pi, "impl": compute_pi,
                  "scale": {"digits": config.DEFAULT_PI_DIGITS}},
}


def task_descriptors(with_alternative=True):
    """Descriptors for every workload task plus the calibration task."""
    pi_alt = PI_MACHIN_DOUBLE_TASK if with_alternative else None
    return [
        TaskDescriptor(CALIBRATION_TASK, "calibration", run_calibration, compute_hint=_calibration_units),
        TaskDescriptor(GAME_TREE_TASK, "game_tree", play_move, compute_hint=_game_units,
                       expected_down=_GAME.size + 64),
        TaskDescriptor(LINSOLVE_TASK, "linsolve", solve_system, compute_hint=_linsolve_units, expected_down=64),
        TaskDescriptor(BLOB_DETECT_TASK, "blob_detect", detect_blobs, access_order_hint=_blob_order,
                       compute_hint=_blob_units, expected_down=_blob_down),
        TaskDescriptor(BLOB_DETECT_ONE_TASK, "blob_detect_1ofN", detect_blobs, access_order_hint=_blob_order,
                       compute_hint=_blob_units, expected_down=_blob_down),
        TaskDescriptor(PI_MACHIN_TASK, "pi_machin", compute_pi, alternative_impl_id=pi_alt,
                       compute_hint=_pi_units, expected_down=64),
    ]


def server_impls():
    """task_id -> (name, implementation) for the server's task table."""
    impls = {CALIBRATION_TASK: ("calibration", run_calibration)}
    for name, entry in AVAILABLE_WORKLOADS.items():
        impls[entry["task_id"]] = (name, entry["impl"])
    impls[PI_MACHIN_DOUBLE_TASK] = ("pi_machin.alternative", compute_pi_double)
    return impls


def install_workloads(server):
    for task_id, (name, fn) in server_impls().items():
        server.register_impl(task_id, name, fn)
    log_debug(f"Installed {len(server.impls)} server implementations")
    return server


def register_workloads(client, with_alternative=True):
    for descriptor in task_descriptors(with_alternative):
        client.register_task(descriptor)
    return client
