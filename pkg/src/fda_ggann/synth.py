"""
Synthetic multi-task MiniC corpus.

Each task starts from a built-in template with its own control and data flow.
Programs of a task are seeded mutants of the template: consistent renaming,
swaps of independent adjacent statements, integer-literal jitter and dead
assignments. Every mutant is re-parsed and turned into an FDA graph before it
is accepted.
"""
import copy
import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .ast_nodes import Ast, AstNode, NodeKind
from .config import SynthConfig
from .corpus import LabeledProgram
from .exceptions import ConfigError, CorpusIOError
from .graph_builder import EdgeType, build_fda
from .lexer import KEYWORDS
from .logger import get_logger
from .parser import parse_source
from .schema import MANIFEST_SCHEMA, validate_document
from .unparse import unparse
from .utils import atomic_write_text

logger = get_logger("synth")

TEMPLATES: Dict[str, str] = {
    "sum": """
int sum_to(int n) {
    int total = 0;
    int i = 1;
    while (i <= n) {
        total = total + i;
        i = i + 1;
    }
    return total;
}
int main() {
    int limit = 100;
    int shown = 1;
    int result = sum_to(limit);
    printf("%d", result);
    return 0;
}
""",
    "factorial": """
int factorial(int n) {
    if (n <= 1) {
        return 1;
    }
    return n * factorial(n - 1);
}
int main() {
    int n = 10;
    int base = 2;
    int value = factorial(n);
    printf("%d", value);
    return 0;
}
""",
    "gcd": """
int gcd(int a, int b) {
    while (b != 0) {
        int r = a % b;
        a = b;
        b = r;
    }
    return a;
}
int main() {
    int x = 84;
    int y = 36;
    int g = gcd(x, y);
    printf("%d", g);
    return 0;
}
""",
    "fibonacci": """
int fib(int n) {
    int prev = 0;
    int curr = 1;
    for (int i = 0; i < n; i++) {
        int next = prev + curr;
        prev = curr;
        curr = next;
    }
    return prev;
}
int main() {
    int n = 20;
    int f = fib(n);
    printf("%d", f);
    return 0;
}
""",
    "max_array": """
int find_max(int values[], int count) {
    int best = values[0];
    for (int i = 1; i < count; i++) {
        if (values[i] > best) {
            best = values[i];
        }
    }
    return best;
}
int main() {
    int data[8];
    int k = 0;
    while (k < 8) {
        data[k] = (k * 7) % 5;
        k++;
    }
    int m = find_max(data, 8);
    printf("%d", m);
    return 0;
}
""",
    "bubble_sort": """
void bubble(int a[], int n) {
    for (int i = 0; i < n - 1; i++) {
        for (int j = 0; j < n - 1 - i; j++) {
            if (a[j] > a[j + 1]) {
                int tmp = a[j];
                a[j] = a[j + 1];
                a[j + 1] = tmp;
            }
        }
    }
}
int main() {
    int items[6];
    int p = 0;
    while (p < 6) {
        items[p] = 6 - p;
        p++;
    }
    bubble(items, 6);
    printf("%d", items[0]);
    return 0;
}
""",
    "average": """
float average(int values[], int count) {
    float total = 0.0;
    int i = 0;
    do {
        total = total + values[i];
        i++;
    } while (i < count);
    return total / count;
}
int main() {
    int scores[5];
    scores[0] = 90;
    scores[1] = 75;
    scores[2] = 88;
    scores[3] = 62;
    scores[4] = 97;
    float avg = average(scores, 5);
    printf("%f", avg);
    return 0;
}
""",
    "power": """
int power(int base, int expo) {
    int result = 1;
    while (expo > 0) {
        if (expo % 2 == 1) {
            result = result * base;
        }
        base = base * base;
        expo = expo / 2;
    }
    return result;
}
int main() {
    int b = 3;
    int e = 13;
    int p = power(b, e);
    printf("%d", p);
    return 0;
}
""",
}

# Pairs of near-duplicate tasks; the second of each pair differs by a small structural delta.
SIMILAR_TEMPLATES: Dict[str, str] = {
    "sum": TEMPLATES["sum"],
    "sum_squares": TEMPLATES["sum"].replace("total = total + i;", "total = total + i * i;"),
    "factorial": TEMPLATES["factorial"],
    "factorial_split": TEMPLATES["factorial"].replace(
        "return n * factorial(n - 1);", "int rest = factorial(n - 1);\n    return n * rest;"),
    "gcd": TEMPLATES["gcd"],
    "gcd_subtract": TEMPLATES["gcd"].replace(
        """    while (b != 0) {
        int r = a % b;
        a = b;
        b = r;
    }""",
        """    while (a != b) {
        if (a > b) {
            a = a - b;
        } else {
            b = b - a;
        }
    }"""),
    "fibonacci": TEMPLATES["fibonacci"],
    "fibonacci_total": TEMPLATES["fibonacci"].replace(
        "    int curr = 1;\n", "    int curr = 1;\n    int seen = 0;\n").replace(
        "        curr = next;\n", "        curr = next;\n        seen = seen + curr;\n").replace(
        "    return prev;", "    return prev + seen;"),
}

NAME_STEMS = ("acc", "val", "tmp", "cnt", "idx", "num", "res", "cur", "lim", "buf",
              "arr", "key", "lo", "hi", "mid", "step", "flag", "len", "pos", "item")

_SWAPPABLE = frozenset({
    NodeKind.DeclStmt,
    NodeKind.BinaryOperator,
    NodeKind.CompoundAssignOperator,
    NodeKind.UnaryOperator,
})

_DEPENDENCE_EDGES = frozenset({EdgeType.LastUse, EdgeType.Compute})


def template_set(similar: bool = False) -> Dict[str, str]:
    return SIMILAR_TEMPLATES if similar else TEMPLATES


def _subtree(ast: Ast, node_id: int) -> Set[int]:
    return set(ast.walk(node_id))


def _declared_names(ast: Ast) -> Set[str]:
    return {n.symbol for n in ast.nodes
            if n.kind in (NodeKind.VarDecl, NodeKind.ParmVarDecl, NodeKind.FunctionDecl) and n.symbol}


def _bodies(ast: Ast) -> List[int]:
    return [ast.children(f)[-1] for f in ast.functions()]


class Mutator:
    """Seeded AST-level mutations of one program."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def fresh_name(self, used: Set[str]) -> str:
        while True:
            stem = NAME_STEMS[int(self.rng.integers(len(NAME_STEMS)))]
            name = f"{stem}{int(self.rng.integers(100))}"
            if name not in used and name not in KEYWORDS:
                used.add(name)
                return name

    def rename(self, ast: Ast) -> Ast:
        """Consistently rename every declared identifier except main."""
        ast = copy.deepcopy(ast)
        declared = sorted(_declared_names(ast) - {"main"})
        used = {n.symbol for n in ast.nodes if n.symbol} | set(declared)
        mapping = {name: self.fresh_name(used) for name in declared}
        for node in ast.nodes:
            if node.symbol in mapping:
                node.symbol = mapping[node.symbol]
        return ast

    def insert_dead_assignment(self, ast: Ast) -> Ast:
        """Add ``int <fresh>; <fresh> = K;`` at a random position of a random function body.

        The fresh variable is never read, so the store is dead.
        """
        ast = copy.deepcopy(ast)
        bodies = _bodies(ast)
        body = ast.node(bodies[int(self.rng.integers(len(bodies)))])
        limit = len(body.children)
        if limit and ast.kind(body.children[-1]) == NodeKind.ReturnStmt:
            limit -= 1
        position = int(self.rng.integers(limit + 1))
        used = {n.symbol for n in ast.nodes if n.symbol}
        name = self.fresh_name(used)
        base = len(ast.nodes)
        ast.nodes.extend([
            AstNode(id=base, kind=NodeKind.DeclStmt, children=[base + 1]),
            AstNode(id=base + 1, kind=NodeKind.VarDecl, symbol=name, type_name="int"),
            AstNode(id=base + 2, kind=NodeKind.BinaryOperator, op="=", children=[base + 3, base + 4]),
            AstNode(id=base + 3, kind=NodeKind.DeclRefExpr, symbol=name),
            AstNode(id=base + 4, kind=NodeKind.IntegerLiteral, literal=str(int(self.rng.integers(100)))),
        ])
        body.children[position:position] = [base, base + 2]
        return ast

    def jitter_literal(self, ast: Ast) -> Ast:
        """Shift one integer literal by a small nonzero amount, staying non-negative."""
        candidates = [n.id for n in ast.nodes if n.kind == NodeKind.IntegerLiteral]
        if not candidates:
            return ast
        ast = copy.deepcopy(ast)
        node = ast.node(candidates[int(self.rng.integers(len(candidates)))])
        delta = int(self.rng.choice([-2, -1, 1, 2]))
        node.literal = str(max(0, int(node.literal or "0") + delta))
        return ast

    def swap_candidates(self, ast: Ast) -> List[Tuple[int, int, int]]:
        """(block, index, index + 1) for adjacent statements with no dependence between them."""
        graph = build_fda(ast)
        linked = {(e.src, e.dst) for e in graph.edges if e.type in _DEPENDENCE_EDGES}
        candidates = []
        for node in ast.nodes:
            if node.kind != NodeKind.CompoundStmt:
                continue
            for index in range(len(node.children) - 1):
                first, second = node.children[index], node.children[index + 1]
                if ast.kind(first) not in _SWAPPABLE or ast.kind(second) not in _SWAPPABLE:
                    continue
                a, b = _subtree(ast, first), _subtree(ast, second)
                if any(ast.kind(n) == NodeKind.CallExpr for n in a | b):
                    continue
                if any((s in a and d in b) or (s in b and d in a) for s, d in linked):
                    continue
                names_a = {ast.node(n).symbol for n in a if ast.node(n).symbol}
                names_b = {ast.node(n).symbol for n in b if ast.node(n).symbol}
                if names_a & names_b:
                    continue
                candidates.append((node.id, index, index + 1))
        return candidates

    def permute(self, ast: Ast) -> Ast:
        """Swap one pair of independent adjacent statements, if any exists."""
        candidates = self.swap_candidates(ast)
        if not candidates:
            return ast
        block, i, j = candidates[int(self.rng.integers(len(candidates)))]
        ast = copy.deepcopy(ast)
        children = ast.node(block).children
        children[i], children[j] = children[j], children[i]
        return ast

    def mutate(self, ast: Ast, cfg: SynthConfig) -> Ast:
        if self.rng.random() < cfg.dead_code:
            ast = parse_source(unparse(self.insert_dead_assignment(ast)))
        if self.rng.random() < cfg.permute:
            ast = self.permute(ast)
        if self.rng.random() < cfg.jitter:
            ast = self.jitter_literal(ast)
        if self.rng.random() < cfg.rename:
            ast = self.rename(ast)
        return ast


def task_names(cfg: SynthConfig) -> List[str]:
    """Directory names of the generated tasks, zero-padded so sorted order is task order."""
    names = list(template_set(cfg.similar))
    if cfg.num_tasks > len(names):
        raise ConfigError(f"synth.num_tasks must be <= {len(names)}, got {cfg.num_tasks}")
    return [f"{t:02d}_{names[t]}" for t in range(cfg.num_tasks)]


def synthesize_task(task: int, cfg: SynthConfig) -> List[LabeledProgram]:
    """All programs of one task; seeded by (seed, task, program index)."""
    templates = template_set(cfg.similar)
    name = list(templates)[task]
    template = parse_source(templates[name])
    directory = task_names(cfg)[task]
    programs = []
    for index in range(cfg.per_task):
        mutator = Mutator(np.random.default_rng([cfg.seed, task, index]))
        source = unparse(mutator.mutate(template, cfg))
        source_id = f"{directory}/{directory}_{index:04d}"
        program = LabeledProgram(source_id=source_id, task_id=task, source=source)
        program.to_graph()
        programs.append(program)
    return programs


def synthesize(cfg: SynthConfig) -> List[LabeledProgram]:
    """
    Generate ``num_tasks * per_task`` labeled programs.

    Raises:
        ConfigError: More tasks requested than templates exist, or a rate is out of range.
    """
    cfg.validate()
    task_names(cfg)
    programs: List[LabeledProgram] = []
    for task in range(cfg.num_tasks):
        programs.extend(synthesize_task(task, cfg))
    logger.info(f"Synthesized {len(programs)} program(s) over {cfg.num_tasks} task(s)"
                + (" (similar mode)" if cfg.similar else ""))
    return programs


def manifest(cfg: SynthConfig, programs: Sequence[LabeledProgram]) -> dict:
    return validate_document({
        "generator": "fda-ggann synth",
        "synth": asdict(cfg),
        "tasks": task_names(cfg),
        "programs": len(programs),
    }, MANIFEST_SCHEMA, "manifest")


def write_corpus(programs: Sequence[LabeledProgram], out_dir: Union[str, Path],
                 cfg: Optional[SynthConfig] = None) -> Path:
    """Write ``out_dir/<task>/<name>.mc`` files plus manifest.json."""
    out_dir = Path(out_dir)
    try:
        for program in programs:
            atomic_write_text(out_dir / f"{program.source_id}.mc", program.source)
        if cfg is not None:
            atomic_write_text(out_dir / "manifest.json",
                              json.dumps(manifest(cfg, programs), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise CorpusIOError(str(out_dir), str(e))
    logger.info(f"Wrote {len(programs)} program(s) to {out_dir}")
    return out_dir
