#!/usr/bin/env python3
"""
Command-line interface: program conversion, corpus synthesis, training,
evaluation and the experiment reports.
"""

import asyncio
import argparse
import sys
import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

# Import rich for progress bars
try:
    from rich.console import Console
    from rich.progress import Progress, SpinnerColumn, TextColumn, BarColumn, TimeRemainingColumn
    from rich.table import Table
except ImportError:
    print("Error: 'rich' library is required. Please install it.", file=sys.stderr)
    sys.exit(1)

from . import __version__
from .ast_nodes import ast_to_json
from .callbacks import LoggingCallback, MetricsCsvWriter, TrainingCallback
from .config import ConfigManager, RunConfig, full_scale_defaults, override
from .corpus import build_graphs, corpus_stats, ingest, load_graph_dir, split, split_graphs, write_graph_dir
from .exceptions import FDAError
from .graph_builder import EdgeType, FdaGraph, build_fda, graph_stats, graph_to_json
from .logger import get_logger, setup_logging
from .parser import parse_source
from .reports import (
    compare,
    export_attention,
    export_embeddings,
    load_model,
    run_ablation,
    save_model,
    sweep_d,
)
from .synth import synthesize, write_corpus
from .trainer import Metrics, Trainer, evaluate
from .utils import atomic_write_text, format_float, parse_int_list

console = Console()
logger = get_logger("cli")

DATA_COMMANDS = ("train", "eval", "ablate", "compare", "embed", "sweep-d", "stats")
TRAINING_COMMANDS = ("train", "ablate", "compare", "sweep-d")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--data', help='Corpus directory (<task>/<name>.mc)')
    parser.add_argument('--from-graphs', help='Graph directory written by `graph --data`')
    parser.add_argument('--split-seed', type=int, help='Seed of the 3:1:1 split (defaults to --seed)')


def _add_training_flags(parser: argparse.ArgumentParser, hidden_size: bool = True) -> None:
    parser.add_argument('--mode', choices=['ggann', 'ggnn'], help='Propagation model')
    if hidden_size:
        parser.add_argument('--d', type=int, help='Hidden size')
    parser.add_argument('--t', type=int, help='Propagation steps')
    parser.add_argument('--unidirectional', action='store_true', default=None,
                        help='Use forward lanes only')
    parser.add_argument('--epochs', type=int, help='Maximum number of epochs')
    parser.add_argument('--batch', type=int, help='Graphs per optimizer step')
    parser.add_argument('--batch-nodes', type=int, help='Node budget per optimizer step (overrides --batch)')
    parser.add_argument('--micro-batch', type=int, help='Graphs per gradient tape')
    parser.add_argument('--workers', type=int, help='Concurrent micro-batches')
    parser.add_argument('--lr', type=float, help='Initial learning rate')
    parser.add_argument('--decay-f', type=float, help='Final learning rate as a fraction of --lr')
    parser.add_argument('--l2', type=float, help='L2 weight')
    parser.add_argument('--l2-all', action='store_true', default=None,
                        help='Also regularize embeddings and initial edge states')
    parser.add_argument('--dropout', type=float, help='Dropout rate on node embeddings')
    parser.add_argument('--patience', type=int, help='Epochs without validation improvement before stopping')
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--record-wall-time', action='store_true', default=None,
                        help='Fill the seconds column of metrics.csv')
    parser.add_argument('--full-scale', action='store_true',
                        help='Start from the full-scale hyperparameters')


def setup_parser():
    """Set up the argument parser."""
    parser = argparse.ArgumentParser(
        prog="fda-ggann",
        description="FDA graphs and gated graph attention networks for program classification",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('--json', action='store_true', help='Output in JSON format')
    parser.add_argument('--config', help='YAML run configuration')
    parser.add_argument('--log-level', default='WARNING', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Logging level')
    parser.add_argument('--log-file', help='Also log to this file')

    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    parse_cmd = subparsers.add_parser('parse', help='Parse a MiniC file and print its AST')
    parse_cmd.add_argument('file', help='MiniC source file')
    parse_cmd.add_argument('--out', help='Write AST JSON here')

    graph = subparsers.add_parser('graph', help='Build FDA graph JSON for a file or a corpus')
    graph.add_argument('file', nargs='?', help='MiniC source file')
    graph.add_argument('--data', help='Corpus directory to convert')
    graph.add_argument('--out', help='Output file (single program) or directory (corpus)')

    synth = subparsers.add_parser('synth', help='Generate a synthetic corpus')
    synth.add_argument('--tasks', type=int, help='Number of tasks')
    synth.add_argument('--per-task', type=int, help='Programs per task')
    synth.add_argument('--seed', type=int, help='Random seed')
    synth.add_argument('--similar', action='store_true', default=None, help='Pairs of near-duplicate tasks')
    synth.add_argument('--rename', type=float, help='Renaming rate')
    synth.add_argument('--permute', type=float, help='Statement swap rate')
    synth.add_argument('--jitter', type=float, help='Literal jitter rate')
    synth.add_argument('--dead-code', type=float, help='Dead assignment rate')
    synth.add_argument('--out', required=True, help='Output directory')

    train = subparsers.add_parser('train', help='Train a model')
    _add_data_flags(train)
    _add_training_flags(train)
    train.add_argument('--out', required=True, help='Checkpoint path')
    train.add_argument('--metrics', help='metrics.csv path (default: next to the checkpoint)')

    evaluate_cmd = subparsers.add_parser('eval', help='Evaluate a checkpoint')
    evaluate_cmd.add_argument('--ckpt', required=True, help='Checkpoint path')
    _add_data_flags(evaluate_cmd)
    evaluate_cmd.add_argument('--split', choices=['train', 'valid', 'test'], default='test', help='Split to score')

    ablate = subparsers.add_parser('ablate', help='Drop each edge type in turn')
    _add_data_flags(ablate)
    _add_training_flags(ablate)
    ablate.add_argument('--out', default='ablation.csv', help='Report path')

    compare_cmd = subparsers.add_parser('compare', help='GGANN/GGNN on FDA/AST graphs')
    _add_data_flags(compare_cmd)
    _add_training_flags(compare_cmd)
    compare_cmd.add_argument('--out', default='compare.csv', help='Report path')

    embed = subparsers.add_parser('embed', help='Export node-kind embeddings with k-means clusters')
    embed.add_argument('--ckpt', required=True, help='Checkpoint path')
    _add_data_flags(embed)
    embed.add_argument('--split', choices=['train', 'valid', 'test'], default='test', help='Split to embed')
    embed.add_argument('--k', type=int, default=5, help='Number of clusters')
    embed.add_argument('--out', default='embeddings.csv', help='Node-kind report path')
    embed.add_argument('--graphs-out', help='Per-graph embedding report path')

    attention = subparsers.add_parser('attention', help='Export readout gates of one program')
    attention.add_argument('--ckpt', required=True, help='Checkpoint path')
    attention.add_argument('file', help='MiniC source file')
    attention.add_argument('--out', default='attention.csv', help='Report path')

    sweep = subparsers.add_parser('sweep-d', help='Throughput and loss for several hidden sizes')
    _add_data_flags(sweep)
    _add_training_flags(sweep, hidden_size=False)
    sweep.set_defaults(d=None)
    sweep.add_argument('--d', dest='d_list', default='8,16,32,64',
                       help='Comma-separated hidden sizes')
    sweep.add_argument('--out', default='sweep.csv', help='Report path')

    stats = subparsers.add_parser('stats', help='Dataset statistics per split')
    _add_data_flags(stats)
    stats.add_argument('--seed', type=int, help='Split seed')

    return parser


def validate_args(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Usage checks that argparse cannot express; failures exit with status 2."""
    if args.command in DATA_COMMANDS:
        if bool(args.data) == bool(args.from_graphs):
            parser.error(f"{args.command}: give exactly one of --data or --from-graphs")
    if args.command == 'graph':
        if bool(args.file) == bool(args.data):
            parser.error("graph: give a FILE or --data")
        if args.data and not args.out:
            parser.error("graph --data needs --out")
    if args.command == 'sweep-d':
        try:
            args.d_values = parse_int_list(args.d_list)
        except ValueError:
            parser.error(f"sweep-d: invalid size list {args.d_list!r}")
        if not args.d_values:
            parser.error("sweep-d: give at least one size")


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or full-scale defaults) with command-line flags applied on top."""
    config = full_scale_defaults() if getattr(args, 'full_scale', False) else ConfigManager(args.config).load()
    if args.command in TRAINING_COMMANDS:
        config.model = override(
            config.model, mode=args.mode, d=args.d, T=args.t,
            bidirectional=False if args.unidirectional else None,
        )
        config.train = override(
            config.train, epochs=args.epochs, batch_graphs=args.batch, batch_nodes=args.batch_nodes,
            micro_batch=args.micro_batch, workers=args.workers, lr=args.lr, decay_F=args.decay_f,
            l2_lambda=args.l2, l2_all=args.l2_all, dropout_rho=args.dropout, patience=args.patience,
            seed=args.seed, record_wall_time=args.record_wall_time,
        )
    if args.command == 'synth':
        config.synth = override(
            config.synth, num_tasks=args.tasks, per_task=args.per_task, seed=args.seed,
            similar=args.similar, rename=args.rename, permute=args.permute, jitter=args.jitter,
            dead_code=args.dead_code,
        )
    return config.validate()


def load_data(args: argparse.Namespace, seed: int) -> Tuple[Dict[str, List[FdaGraph]], List[str]]:
    """Train/valid/test graphs and task names from --data or --from-graphs."""
    if args.from_graphs:
        graphs = load_graph_dir(args.from_graphs)
        tasks = sorted({g.source_id.split("/", 1)[0] for g in graphs})
        return split_graphs(graphs, seed=seed), tasks
    result = ingest(args.data)
    if result.skipped and not args.json:
        console.print(f"[yellow]Skipped {len(result.skipped)} file(s) that failed to build.[/]")
    parts = split(result.programs, seed=seed)
    return {name: build_graphs(members) for name, members in parts.as_dict().items()}, result.tasks


def report_error(args: argparse.Namespace, message: str) -> int:
    if args.json:
        print(json.dumps({"error": message}))
    else:
        console.print(f"[bold red]Error:[/bold red] {message}")
    return 1


class QueueProgressCallback(TrainingCallback):
    """Forwards validation results from the training thread to the progress monitor."""

    def __init__(self, loop: asyncio.AbstractEventLoop, queue: asyncio.Queue):
        self.loop = loop
        self.queue = queue

    def on_epoch_end(self, metrics: Metrics) -> None:
        if metrics.split == "valid":
            text = f"epoch {metrics.epoch}: valid accuracy {format_float(metrics.accuracy)}"
            self.loop.call_soon_threadsafe(self.queue.put_nowait, text)


async def monitor_progress(queue: asyncio.Queue, task_description: str, total: Optional[int] = None):
    """Monitor progress queue and update rich progress bar."""
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TimeRemainingColumn(),
        console=console
    ) as progress:
        task_id = progress.add_task(task_description, total=total)

        while True:
            item = await queue.get()
            if item is None:
                break

            progress.update(task_id, description=f"{task_description} ({item})")
            progress.advance(task_id)


async def run_with_progress(args: argparse.Namespace, description: str, total: Optional[int], work, *extra):
    """
    Run blocking ``work(callbacks, *extra)`` in a thread; unless --json, a rich
    progress bar follows the per-epoch validation results.
    """
    if args.json:
        return await asyncio.to_thread(work, [], *extra)
    queue: asyncio.Queue = asyncio.Queue()
    callback = QueueProgressCallback(asyncio.get_running_loop(), queue)
    monitor_task = asyncio.create_task(monitor_progress(queue, description, total))
    try:
        return await asyncio.to_thread(work, [callback], *extra)
    finally:
        await queue.put(None)
        await monitor_task


async def handle_parse(args):
    ast = parse_source(Path(args.file).read_text(encoding="utf-8"))
    text = ast_to_json(ast)
    if args.out:
        atomic_write_text(args.out, text)
        if args.json:
            print(json.dumps({"nodes": len(ast), "out": args.out}))
        else:
            console.print(f"[green]Wrote {len(ast)} AST nodes to {args.out}[/]")
    else:
        print(text)
    return 0


def _stats_table(title: str, graph: FdaGraph) -> Table:
    stats = graph_stats(graph)
    table = Table(title=title)
    table.add_column("Edge type", style="cyan")
    table.add_column("Count", style="green")
    for edge_type in EdgeType:
        table.add_row(edge_type.name, str(stats.per_type[edge_type.name]))
    table.add_row("[bold]nodes[/bold]", str(stats.nodes))
    table.add_row("[bold]edges[/bold]", str(stats.edges))
    return table


async def handle_graph(args):
    if args.data:
        result = await asyncio.to_thread(ingest, args.data)
        written = write_graph_dir(build_graphs(result.programs), args.out)
        payload = {"graphs": written, "skipped": len(result.skipped), "tasks": result.tasks, "out": args.out}
        if args.json:
            print(json.dumps(payload, indent=2))
        else:
            console.print(f"[green]Wrote {written} graph(s) for {len(result.tasks)} task(s) to {args.out}[/]")
            if result.skipped:
                console.print(f"[yellow]Skipped {len(result.skipped)} file(s).[/]")
        return 0

    path = Path(args.file)
    graph = build_fda(parse_source(path.read_text(encoding="utf-8")), source_id=path.stem)
    text = graph_to_json(graph)
    if args.out:
        atomic_write_text(args.out, text)
    if args.json:
        stats = graph_stats(graph)
        print(text if not args.out else json.dumps({"nodes": stats.nodes, "edges": stats.edges, "out": args.out}))
    elif args.out:
        console.print(_stats_table(f"FDA graph of {path.name}", graph))
    else:
        print(text)
    return 0


async def handle_synth(args):
    config = load_run_config(args)
    programs = await asyncio.to_thread(synthesize, config.synth)
    write_corpus(programs, args.out, config.synth)
    if args.json:
        print(json.dumps({"programs": len(programs), "tasks": config.synth.num_tasks, "out": args.out}, indent=2))
    else:
        console.print(f"[green]Wrote {len(programs)} program(s) in {config.synth.num_tasks} task(s) to {args.out}[/]")
    return 0


def _split_seed(args: argparse.Namespace, default: int) -> int:
    return args.split_seed if args.split_seed is not None else default


async def handle_train(args):
    config = load_run_config(args)
    split_seed = _split_seed(args, config.train.seed)
    splits, tasks = await asyncio.to_thread(load_data, args, split_seed)
    config.model = override(config.model, num_classes=len(tasks))

    out = Path(args.out)
    metrics_path = Path(args.metrics) if args.metrics else out.parent / "metrics.csv"

    def work(callbacks: List[TrainingCallback]):
        trainer = Trainer(config.model, config.train,
                          callbacks=[MetricsCsvWriter(metrics_path), LoggingCallback(), *callbacks])
        result = trainer.fit(splits["train"], splits["valid"])
        test = evaluate(trainer.model, splits["test"], split="test", epoch=result.best_epoch)
        save_model(out, trainer.model, config.train, extra={"tasks": tasks, "split_seed": split_seed})
        return result, test

    result, test = await run_with_progress(args, "Training", config.train.epochs, work)

    average, minimum, maximum = test.class_summary()
    summary = {
        "checkpoint": str(out),
        "metrics": str(metrics_path),
        "epochs_run": result.epochs_run,
        "stopped_early": result.stopped_early,
        "best_epoch": result.best_epoch,
        "best_valid_accuracy": result.best_valid_accuracy,
        "test_accuracy": test.accuracy,
        "per_class": {"average": average, "minimum": minimum, "maximum": maximum},
    }
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        table = Table(title="Training Summary")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="green")
        for key in ("epochs_run", "best_epoch", "best_valid_accuracy", "test_accuracy"):
            value = summary[key]
            table.add_row(key, format_float(value) if isinstance(value, float) else str(value))
        table.add_row("per-class avg/min/max", f"{format_float(average)} / {format_float(minimum)} / {format_float(maximum)}")
        console.print(table)
        console.print(f"Checkpoint written to {out}")
    return 0


def _metrics_table(title: str, metrics: Metrics, tasks: Sequence[str]) -> Table:
    table = Table(title=title)
    table.add_column("Task", style="cyan")
    table.add_column("Accuracy", style="green")
    table.add_column("One-vs-rest", style="magenta")
    for label, accuracy in metrics.per_class.items():
        name = tasks[label] if label < len(tasks) else str(label)
        table.add_row(name, format_float(accuracy), format_float(metrics.one_vs_rest.get(label, 0.0)))
    table.add_row("[bold]overall[/bold]", format_float(metrics.accuracy), "")
    return table


async def handle_eval(args):
    model, ckpt_config = load_model(args.ckpt)
    seed = _split_seed(args, ckpt_config.get("split_seed", ckpt_config.get("train", {}).get("seed", 42)))
    splits, tasks = await asyncio.to_thread(load_data, args, seed)
    metrics = await asyncio.to_thread(evaluate, model, splits[args.split], args.split)
    average, minimum, maximum = metrics.class_summary()
    if args.json:
        print(json.dumps({
            "split": args.split,
            "count": metrics.count,
            "loss": metrics.loss,
            "accuracy": metrics.accuracy,
            "per_class": {str(k): v for k, v in metrics.per_class.items()},
            "one_vs_rest": {str(k): v for k, v in metrics.one_vs_rest.items()},
            "summary": {"average": average, "minimum": minimum, "maximum": maximum},
        }, indent=2))
    else:
        console.print(_metrics_table(f"Evaluation on {args.split} ({metrics.count} graphs)", metrics, tasks))
    return 0


async def handle_ablate(args):
    config = load_run_config(args)
    splits, tasks = await asyncio.to_thread(load_data, args, _split_seed(args, config.train.seed))
    config.model = override(config.model, num_classes=len(tasks))
    report = await asyncio.to_thread(run_ablation, splits, config.model, config.train, args.out)
    if args.json:
        print(json.dumps({"out": args.out, "rows": [asdict(row) for row in report.rows]}, indent=2))
    else:
        table = Table(title="Edge-type Ablation")
        table.add_column("Dropped", style="cyan")
        table.add_column("Accuracy", style="green")
        for row in report.rows:
            table.add_row(row.variant, format_float(row.accuracy) if row.accuracy is not None else f"[red]{row.error}[/]")
        console.print(table)
        console.print(f"Report written to {args.out}")
    return 0


async def handle_compare(args):
    config = load_run_config(args)
    splits, tasks = await asyncio.to_thread(load_data, args, _split_seed(args, config.train.seed))
    config.model = override(config.model, num_classes=len(tasks))
    rows = await asyncio.to_thread(compare, splits, config.model, config.train, args.out)
    if args.json:
        print(json.dumps({"out": args.out, "rows": [asdict(row) for row in rows]}, indent=2))
    else:
        table = Table(title="Model x Representation")
        for column in ("Model", "Representation", "Average", "Minimum", "Maximum", "Test accuracy"):
            table.add_column(column)
        for row in rows:
            table.add_row(row.model, row.representation, *(format_float(v) for v in
                                                          (row.average, row.minimum, row.maximum, row.accuracy)))
        console.print(table)
    return 0


async def handle_embed(args):
    model, ckpt_config = load_model(args.ckpt)
    seed = _split_seed(args, ckpt_config.get("split_seed", ckpt_config.get("train", {}).get("seed", 42)))
    splits, _ = await asyncio.to_thread(load_data, args, seed)
    report = await asyncio.to_thread(export_embeddings, model, splits[args.split], args.out,
                                     args.graphs_out, args.k, seed)
    clusters: Dict[int, List[str]] = {}
    for kind, cluster in zip(report.kinds, report.clusters):
        clusters.setdefault(int(cluster), []).append(kind.name)
    if args.json:
        print(json.dumps({"out": args.out, "clusters": {str(k): v for k, v in sorted(clusters.items())}}, indent=2))
    else:
        table = Table(title="Node-kind Clusters")
        table.add_column("Cluster", style="cyan")
        table.add_column("Kinds", style="green")
        for cluster, kinds in sorted(clusters.items()):
            table.add_row(str(cluster), ", ".join(kinds))
        console.print(table)
    return 0


async def handle_attention(args):
    model, _ = load_model(args.ckpt)
    path = Path(args.file)
    graph = build_fda(parse_source(path.read_text(encoding="utf-8")), source_id=path.stem)
    rows = export_attention(model, graph, args.out)
    if args.json:
        print(json.dumps({"out": args.out, "nodes": len(rows)}, indent=2))
    else:
        top = sorted(rows, key=lambda r: r.gate, reverse=True)[:10]
        table = Table(title=f"Highest readout gates of {path.name}")
        table.add_column("Node", style="cyan")
        table.add_column("Kind")
        table.add_column("Gate", style="green")
        for row in top:
            table.add_row(str(row.node), row.kind.name, format_float(row.gate))
        console.print(table)
    return 0


async def handle_sweep_d(args):
    config = load_run_config(args)
    splits, tasks = await asyncio.to_thread(load_data, args, _split_seed(args, config.train.seed))
    config.model = override(config.model, num_classes=len(tasks))
    rows = await asyncio.to_thread(sweep_d, splits, args.d_values, config.model, config.train, args.out)
    if args.json:
        print(json.dumps({"out": args.out, "rows": [asdict(row) for row in rows]}, indent=2))
    else:
        table = Table(title="Hidden-size Sweep")
        for column in ("d", "Train graphs/s", "Eval graphs/s", "Train loss", "Test loss", "Test accuracy"):
            table.add_column(column)
        for row in rows:
            table.add_row(str(row.d), *(format_float(v) for v in
                                        (row.train_rate, row.eval_rate, row.train_loss, row.test_loss, row.test_accuracy)))
        console.print(table)
    return 0


async def handle_stats(args):
    seed = _split_seed(args, args.seed if args.seed is not None else 42)
    splits, tasks = await asyncio.to_thread(load_data, args, seed)
    rows = corpus_stats(splits)
    if args.json:
        print(json.dumps([{
            "split": r.split, "graphs": r.graphs, "classes": r.classes, "nodes": r.nodes, "edges": r.edges,
            "per_type": {t.name: c for t, c in r.per_type.items()},
        } for r in rows], indent=2))
    else:
        table = Table(title=f"Dataset Statistics ({len(tasks)} tasks)")
        for column in ("Split", "Graphs", "Classes", "Avg nodes", "Avg edges", *(t.name for t in EdgeType)):
            table.add_column(column)
        for r in rows:
            table.add_row(r.split, str(r.graphs), str(r.classes), format_float(r.avg_nodes),
                          format_float(r.avg_edges), *(str(r.per_type[t]) for t in EdgeType))
        console.print(table)
    return 0


async def main_async(argv: Optional[Sequence[str]] = None):
    parser = setup_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 2
    validate_args(parser, args)
    setup_logging(args.log_level, args.log_file)

    command_handlers = {
        'parse': handle_parse,
        'graph': handle_graph,
        'synth': handle_synth,
        'train': handle_train,
        'eval': handle_eval,
        'ablate': handle_ablate,
        'compare': handle_compare,
        'embed': handle_embed,
        'attention': handle_attention,
        'sweep-d': handle_sweep_d,
        'stats': handle_stats,
    }

    handler = command_handlers.get(args.command)
    if handler:
        try:
            return await handler(args)
        except FDAError as e:
            return report_error(args, str(e))
        except OSError as e:
            return report_error(args, f"{e.strerror or e}: {e.filename}" if e.filename else str(e))
    else:
        return 2


def main():
    try:
        sys.exit(asyncio.run(main_async()))
    except KeyboardInterrupt:
        sys.exit(1)


if __name__ == '__main__':
    main()
