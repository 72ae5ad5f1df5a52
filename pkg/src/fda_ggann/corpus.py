"""
Corpus ingestion, stratified splitting and graph directories.

On-disk layout: ``root/<task>/<name>.mc``. Task directories are mapped to dense
0-based class labels in sorted name order.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ClassTooSmall, CorpusIOError, NoTasksFound, SchemaError, SourceError
from .graph_builder import EdgeType, FdaGraph, build_fda, graph_from_json, graph_to_json
from .logger import get_logger
from .parser import parse_source
from .schema import MANIFEST_SCHEMA, validate_document
from .utils import atomic_write_text, sorted_files

logger = get_logger("corpus")

MIN_PER_CLASS = 5
DEFAULT_RATIOS = (3, 1, 1)


@dataclass
class LabeledProgram:
    source_id: str
    task_id: int
    source: str
    graph: Optional[FdaGraph] = field(default=None, compare=False, repr=False)

    def to_graph(self) -> FdaGraph:
        if self.graph is None:
            self.graph = build_fda(parse_source(self.source), label=self.task_id, source_id=self.source_id)
        return self.graph


@dataclass
class SkipRecord:
    path: str
    reason: str


@dataclass
class IngestResult:
    programs: List[LabeledProgram]
    skipped: List[SkipRecord]
    tasks: List[str]

    def __len__(self) -> int:
        return len(self.programs)


@dataclass
class Splits:
    train: List[LabeledProgram]
    valid: List[LabeledProgram]
    test: List[LabeledProgram]

    def as_dict(self) -> Dict[str, List[LabeledProgram]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


@dataclass
class CorpusStats:
    split: str
    graphs: int
    classes: int
    nodes: int
    edges: int
    per_type: Dict[EdgeType, int]

    @property
    def avg_nodes(self) -> float:
        return self.nodes / self.graphs if self.graphs else 0.0

    @property
    def avg_edges(self) -> float:
        return self.edges / self.graphs if self.graphs else 0.0


def _task_dirs(root: Path, suffix: str) -> List[Path]:
    if not root.is_dir():
        raise CorpusIOError(str(root), "not a directory")
    try:
        candidates = sorted(p for p in root.iterdir() if p.is_dir())
    except OSError as e:
        raise CorpusIOError(str(root), str(e))
    return [p for p in candidates if sorted_files(p, suffix)]


def ingest(root: Union[str, Path]) -> IngestResult:
    """
    Read every ``root/<task>/<name>.mc`` file into a LabeledProgram.

    Files that fail to lex, parse or build a graph are skipped and reported.

    Raises:
        CorpusIOError: ``root`` or a source file cannot be read.
        NoTasksFound: No task directory holds a source file.
    """
    root = Path(root)
    tasks = _task_dirs(root, ".mc")
    if not tasks:
        raise NoTasksFound(str(root))

    programs: List[LabeledProgram] = []
    skipped: List[SkipRecord] = []
    for label, task_dir in enumerate(tasks):
        for path in sorted_files(task_dir, ".mc"):
            source_id = path.relative_to(root).with_suffix("").as_posix()
            try:
                source = path.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as e:
                raise CorpusIOError(str(path), str(e))
            program = LabeledProgram(source_id=source_id, task_id=label, source=source)
            try:
                program.to_graph()
            except SourceError as e:
                logger.warning(f"Skipping {path}: {e}")
                skipped.append(SkipRecord(path=str(path), reason=str(e)))
                continue
            programs.append(program)

    logger.info(f"Ingested {len(programs)} program(s) in {len(tasks)} task(s) from {root}"
                + (f", skipped {len(skipped)}" if skipped else ""))
    return IngestResult(programs=programs, skipped=skipped, tasks=[p.name for p in tasks])


def split(programs: Sequence[LabeledProgram], ratios: Tuple[int, int, int] = DEFAULT_RATIOS,
          seed: int = 42) -> Splits:
    """
    Stratified split. Per class, valid and test get floor(n * r / sum(ratios))
    programs each and train gets the rest; membership depends only on the seed.

    Raises:
        ClassTooSmall: A class has fewer than five programs.
    """
    by_class: Dict[int, List[LabeledProgram]] = {}
    for program in programs:
        by_class.setdefault(program.task_id, []).append(program)

    total = sum(ratios)
    result = Splits(train=[], valid=[], test=[])
    for label in sorted(by_class):
        members = sorted(by_class[label], key=lambda p: p.source_id)
        if len(members) < MIN_PER_CLASS:
            raise ClassTooSmall(label, len(members), MIN_PER_CLASS)
        order = np.random.default_rng([seed, label]).permutation(len(members))
        shuffled = [members[i] for i in order]
        n_valid = len(members) * ratios[1] // total
        n_test = len(members) * ratios[2] // total
        n_train = len(members) - n_valid - n_test
        result.train.extend(shuffled[:n_train])
        result.valid.extend(shuffled[n_train:n_train + n_valid])
        result.test.extend(shuffled[n_train + n_valid:])
    return result


def build_graphs(programs: Sequence[LabeledProgram]) -> List[FdaGraph]:
    """Labeled FDA graphs in program order."""
    return [program.to_graph() for program in programs]


def corpus_stats(splits: Dict[str, Sequence[FdaGraph]]) -> List[CorpusStats]:
    """Graph, node and per-edge-type counts for each named split."""
    rows = []
    for name, graphs in splits.items():
        per_type = {t: 0 for t in EdgeType}
        for graph in graphs:
            for t, count in graph.edge_counts().items():
                per_type[t] += count
        rows.append(CorpusStats(
            split=name,
            graphs=len(graphs),
            classes=len({g.label for g in graphs if g.label is not None}),
            nodes=sum(g.num_nodes for g in graphs),
            edges=sum(per_type.values()),
            per_type=per_type,
        ))
    return rows


def write_graph_dir(graphs: Sequence[FdaGraph], out_dir: Union[str, Path]) -> int:
    """Write each graph to ``out_dir/<source_id>.json``; returns the number written."""
    out_dir = Path(out_dir)
    for graph in graphs:
        try:
            atomic_write_text(out_dir / f"{graph.source_id}.json", graph_to_json(graph))
        except OSError as e:
            raise CorpusIOError(str(out_dir / graph.source_id), str(e))
    logger.info(f"Wrote {len(graphs)} graph(s) to {out_dir}")
    return len(graphs)


def load_graph_dir(root: Union[str, Path]) -> List[FdaGraph]:
    """
    Read a directory written by write_graph_dir. Unlabeled graphs take the
    dense class of their task directory.

    Raises:
        CorpusIOError: A file cannot be read.
        NoTasksFound: No task directory holds a graph file.
        SchemaError: A file is not a valid graph document.
    """
    root = Path(root)
    tasks = _task_dirs(root, ".json")
    if not tasks:
        raise NoTasksFound(str(root))
    graphs = []
    for label, task_dir in enumerate(tasks):
        for path in sorted_files(task_dir, ".json"):
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as e:
                raise CorpusIOError(str(path), str(e))
            try:
                graph = graph_from_json(text)
            except SchemaError as e:
                raise SchemaError(f"{path}: {e}")
            if graph.label is None:
                graph = graph.with_label(label)
            graphs.append(graph)
    logger.info(f"Loaded {len(graphs)} graph(s) from {root}")
    return graphs


def split_graphs(graphs: Sequence[FdaGraph], ratios: Tuple[int, int, int] = DEFAULT_RATIOS,
                 seed: int = 42) -> Dict[str, List[FdaGraph]]:
    """The same stratified split applied to already built graphs."""
    holders = [LabeledProgram(source_id=g.source_id, task_id=g.label if g.label is not None else -1,
                              source="", graph=g) for g in graphs]
    parts = split(holders, ratios, seed)
    return {name: [p.graph for p in members if p.graph is not None]
            for name, members in parts.as_dict().items()}


def read_manifest(root: Union[str, Path]) -> Optional[dict]:
    """The synthetic corpus manifest, if present."""
    path = Path(root) / "manifest.json"
    if not path.exists():
        return None
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CorpusIOError(str(path), str(e))
    return validate_document(data, MANIFEST_SCHEMA, "manifest")
