#!/usr/bin/env python
"""
offgrid command line.

    python -m offgrid bench --workload blob_detect --strategy eager,lazy,pipelined --network 3g
    python -m offgrid serve --port 47011 --registry ./registry
    python -m offgrid demo
    python -m offgrid demo --server 127.0.0.1:47011
    python -m offgrid profile --network wifi

Add --debug before the command to write debug logging to offgrid_debug.log.
"""

import argparse
import os
import sys

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from offgrid.utils.logger_setup import log_debug
log_debug("run_app module initialized.")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_EQUIVALENCE = 2


def _split(text):
    if not text:
        return []
    return [part.strip() for part in text.split(',') if part.strip()]


def _cache_values(text):
    from offgrid.core.errors import ConfigError
    from offgrid.run_config import parse_bool
    if text.strip().lower() == 'both':
        return [False, True]
    try:
        return [parse_bool(text)]
    except ConfigError:
        raise ConfigError(f"--cache must be on, off or both, got '{text}'") from None


def _run_config(args):
    from offgrid.run_config import RunConfig
    run = RunConfig.load(args.config) if getattr(args, 'config', None) else RunConfig()
    return run.override(timeout_s=getattr(args, 'timeout', None), registry_dir=getattr(args, 'registry', None))


def build_parser():
    parser = argparse.ArgumentParser(prog='offgrid', description="Computation offloading middleware and benchmarks.")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging to offgrid_debug.log")
    commands = parser.add_subparsers(dest='command')

    bench = commands.add_parser('bench', help="Run an experiment matrix and print a report")
    bench.add_argument('--workload', help="Comma list: game_tree, linsolve, blob_detect, blob_detect_1ofN, pi_machin")
    bench.add_argument('--strategy', help="Comma list of local, eager, lazy, pipelined, auto")
    bench.add_argument('--network', help="Comma list of wifi, 3g, loopback or custom:<rtt_ms>,<up_Bps>,<down_Bps>")
    bench.add_argument('--cache', help="on, off or both")
    bench.add_argument('--trials', type=int, default=None)
    bench.add_argument('--format', choices=('csv', 'table'), default='table')
    bench.add_argument('--out', help="Write the report here instead of stdout")
    bench.add_argument('--seed', type=int, default=None)
    bench.add_argument('--n', type=int, default=None, help="Blob count, or matrix size for linsolve")
    bench.add_argument('--count', type=int, default=None, help="Blob count")
    bench.add_argument('--blob-bytes', type=int, default=None)
    bench.add_argument('--rounds', type=int, default=None, help="Detection rounds per blob")
    bench.add_argument('--depth', type=int, default=None, help="Game tree search depth")
    bench.add_argument('--moves', type=int, default=None, help="Game moves per trial")
    bench.add_argument('--size', type=int, default=None, help="Matrix size for linsolve")
    bench.add_argument('--iterations', '--k', dest='iterations', type=int, default=None,
                       help="Linsolve repetitions")
    bench.add_argument('--digits', type=int, default=None)
    bench.add_argument('--blackhole-after', type=int, default=None, help="Drop every frame after this many bytes")
    bench.add_argument('--clock', choices=('virtual', 'real'), default='virtual')
    bench.add_argument('--local-speed', type=float, default=None, help="Local work units per second")
    bench.add_argument('--server-speed', type=float, default=None, help="Server work units per second")
    bench.add_argument('--timeout', type=float, default=None)
    bench.add_argument('--no-alternative', action='store_true', help="Do not offer alternative implementations")
    bench.add_argument('--config', help="Run configuration file")

    serve = commands.add_parser('serve', help="Run an offloading server over TCP")
    serve.add_argument('--host', default=None)
    serve.add_argument('--port', type=int, default=None)
    serve.add_argument('--registry', help="Directory for code bundles and the object cache")
    serve.add_argument('--timeout', type=float, default=None)
    serve.add_argument('--config', help="Run configuration file")

    demo = commands.add_parser('demo', help="End-to-end run over TCP against a loopback or running server")
    demo.add_argument('--server', nargs='?', const='', default=None, metavar='HOST:PORT',
                      help="Use a running server; without a value, server_ip and server_port from --config")
    demo.add_argument('--workload', default='blob_detect')
    demo.add_argument('--strategy', default=None)
    demo.add_argument('--cache', default=None, help="on or off")
    demo.add_argument('--timeout', type=float, default=None)
    demo.add_argument('--config', help="Run configuration file")

    profile = commands.add_parser('profile', help="Profile an emulated link and print the measured profile")
    profile.add_argument('--network', default=None)
    profile.add_argument('--clock', choices=('virtual', 'real'), default='virtual')
    profile.add_argument('--config', help="Run configuration file")
    return parser


def _bench(args):
    from offgrid.bench.matrix import BenchConfig, run_matrix
    from offgrid.bench.report import emit_report

    run = _run_config(args)
    from_file = bool(args.config)
    strategies = _split(args.strategy) or ([run.strategy] if from_file else None)
    links = _split(args.network) or ([run.network] if from_file else None)
    cache = _cache_values(args.cache) if args.cache else ([run.cache_enabled] if from_file else None)
    scale = {
        'count': args.count if args.count is not None else args.n,
        'n': args.size if args.size is not None else args.n,
        'k': args.iterations,
        'blob_bytes': args.blob_bytes,
        'rounds': args.rounds,
        'depth': args.depth,
        'moves': args.moves,
        'digits': args.digits,
    }
    bench = BenchConfig(timeout_s=run.timeout_s, clock=args.clock, blackhole_after=args.blackhole_after,
                        local_speed=args.local_speed, server_speed=args.server_speed,
                        with_alternative=not args.no_alternative,
                        scale={k: v for k, v in scale.items() if v is not None})
    if args.workload:
        bench.workloads = _split(args.workload)
    if strategies:
        bench.strategies = strategies
    if links:
        bench.links = links
    if cache:
        bench.cache = cache
    if args.trials is not None:
        bench.trials = args.trials
    if args.seed is not None:
        bench.seed = args.seed

    print(f"Running {len(bench.workloads) * len(bench.strategies) * len(bench.links) * len(bench.cache)} cells "
          f"x {bench.trials} trials ({bench.clock} clock)...", file=sys.stderr)
    rows = run_matrix(bench)
    report = emit_report(rows, args.format, clock=bench.clock)
    if args.out:
        with open(args.out, 'w', encoding='utf-8', newline='') as f:
            f.write(report)
        print(f"Report written to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(report)
    return EXIT_OK


def _server_address(text, run):
    """HOST:PORT from --server, or the run configuration's address when empty."""
    from offgrid.core.errors import ConfigError
    from offgrid.run_config import parse_port
    if not text:
        return run.server_ip, run.server_port
    host, sep, port = text.rpartition(':')
    if not sep or not host:
        raise ConfigError(f"--server must be HOST:PORT, got '{text}'")
    try:
        return host, parse_port(port)
    except ValueError:
        raise ConfigError(f"--server port must be a number, got '{port}'") from None


def _serve(args):
    from offgrid import config
    from offgrid.processing.workload_loader import install_workloads
    from offgrid.runtime.server import TcpServer

    run = _run_config(args)
    host = args.host or run.server_ip
    port = args.port if args.port is not None else run.server_port
    registry_dir = run.registry_dir or config.DEFAULT_REGISTRY_DIR
    server = TcpServer(host, port, registry_dir=registry_dir, setup=install_workloads, timeout_s=run.timeout_s)
    print(f"Code registry: {registry_dir}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("Shutting down.")
        server.stop_event.set()
    return EXIT_OK


def _demo(args):
    from offgrid.core.errors import ConfigError
    from offgrid.core.object_model import graph_hash
    from offgrid.netsim import connect
    from offgrid.processing.workload_loader import (WorkloadSpec, build_calibration, build_graph, install_workloads,
                                                    register_workloads)
    from offgrid.runtime.client import ClientRuntime
    from offgrid.runtime.decision import calibrate
    from offgrid.runtime.server import TcpServer

    run = _run_config(args)
    strategy = args.strategy or run.strategy
    cache_enabled = _cache_values(args.cache)[0] if args.cache else run.cache_enabled
    spec = WorkloadSpec(args.workload)

    server = None
    if args.server is None:
        server = TcpServer('127.0.0.1', 0, setup=install_workloads, timeout_s=run.timeout_s).start()
        host, port = '127.0.0.1', server.port
    else:
        host, port = _server_address(args.server, run)
    channel = None
    try:
        try:
            channel = connect(host, port, run.timeout_s)
        except OSError as e:
            raise ConfigError(f"cannot reach server {host}:{port}: {e}") from None
        print(f"Connected to {host}:{port}")
        client = register_workloads(ClientRuntime(channel, cache_enabled=cache_enabled, timeout_s=run.timeout_s,
                                                  static_names=run.static_roots, strategy=strategy))
        if not client.register_code():
            print("Code registration failed; every task will run locally.")
        print(f"Code registered: {client.code_bytes_up} bytes on the code channel")
        graph, target, _ = build_calibration()
        calibrate(client, graph, target)
        profile = client.profile_network()
        print(f"Profile: rtt {profile.rtt * 1000:.3f} ms, up {profile.uplink:,.0f} B/s, "
              f"down {profile.downlink:,.0f} B/s")

        graph, target, params = build_graph(spec)
        local_graph = graph.copy()
        for _ in range(spec.invocations):
            payload, metrics = client.invoke(spec.task_id, graph, target, params)
        print(f"{spec.name}: placement {metrics.placement.label}, wall {metrics.wall_time:.4f} s, "
              f"up {metrics.bytes_up} B, down {metrics.bytes_down} B, fetches {metrics.fetch_round_trips}")

        local = ClientRuntime(None, strategy='local')
        register_workloads(local)
        for _ in range(spec.invocations):
            local_payload, _ = local.invoke(spec.task_id, local_graph, target, params)
        roots = [target, *params]
        same = local_payload == payload and graph_hash(local_graph, roots) == graph_hash(graph, roots)
        print(f"Result matches a local run: {'yes' if same else 'NO'}")
        return EXIT_OK if same else EXIT_EQUIVALENCE
    finally:
        if channel is not None:
            channel.close()
        if server is not None:
            server.stop()


def _profile(args):
    from offgrid.netsim import RealClockNetwork, VirtualNetwork, parse_network
    from offgrid.runtime.client import ClientRuntime
    from offgrid.runtime.server import ServerRuntime

    run = _run_config(args)
    link_config = parse_network(args.network or run.network)
    network = VirtualNetwork(link_config) if args.clock == 'virtual' else RealClockNetwork(link_config)
    try:
        ServerRuntime(network.server, timeout_s=run.timeout_s)
        client = ClientRuntime(network.client, timeout_s=run.timeout_s)
        profile = client.profile_network()
    finally:
        network.close()
    print(f"link {link_config.name} ({args.clock} clock)")
    print(f"  reachable  {profile.reachable}")
    print(f"  rtt        {profile.rtt * 1000:.3f} ms")
    print(f"  uplink     {profile.uplink:,.0f} B/s")
    print(f"  downlink   {profile.downlink:,.0f} B/s")
    return EXIT_OK


_COMMANDS = {'bench': _bench, 'serve': _serve, 'demo': _demo, 'profile': _profile}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    from offgrid import config
    if args.debug:
        print("Debug mode explicitly enabled via --debug flag.", file=sys.stderr)
        config.IS_DEBUG_MODE = True

    from offgrid.utils.logger_setup import setup_logging
    setup_logging()
    log_debug(f"run_app: command {args.command}, debug {config.IS_DEBUG_MODE}")

    from offgrid.core.errors import ConfigError, EquivalenceViolation
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EquivalenceViolation as e:
        print(f"equivalence violation: {e}", file=sys.stderr)
        return EXIT_EQUIVALENCE


if __name__ == "__main__":
    sys.exit(main())
