import json
from collections import Counter

import numpy as np
import pytest

from src.fda_ggann.ast_nodes import NodeKind
from src.fda_ggann.config import SynthConfig
from src.fda_ggann.corpus import ingest, read_manifest
from src.fda_ggann.exceptions import ConfigError
from src.fda_ggann.graph_builder import build_fda, graph_to_json
from src.fda_ggann.parser import parse_source
from src.fda_ggann.synth import (
    SIMILAR_TEMPLATES,
    TEMPLATES,
    Mutator,
    synthesize,
    task_names,
    write_corpus,
)
from src.fda_ggann.unparse import unparse


@pytest.fixture
def small_cfg():
    return SynthConfig(num_tasks=3, per_task=6, seed=5)


class TestTemplates:

    @pytest.mark.parametrize("name", sorted(set(TEMPLATES) | set(SIMILAR_TEMPLATES)))
    def test_template_builds(self, name):
        source = {**TEMPLATES, **SIMILAR_TEMPLATES}[name]
        assert build_fda(parse_source(source)).num_nodes > 10

    def test_similar_variants_differ(self):
        for name in ("sum_squares", "factorial_split", "gcd_subtract", "fibonacci_total"):
            assert SIMILAR_TEMPLATES[name] not in TEMPLATES.values()

    def test_kind_multisets_differ(self):
        multisets = {name: tuple(sorted(Counter(build_fda(parse_source(s)).kinds).items()))
                     for name, s in TEMPLATES.items()}
        assert len(set(multisets.values())) == len(TEMPLATES)


class TestMutator:

    def test_rename_keeps_graph(self):
        ast = parse_source(TEMPLATES["gcd"])
        renamed = Mutator(np.random.default_rng(0)).rename(ast)
        before, after = build_fda(ast), build_fda(renamed)
        assert after.kinds == before.kinds
        assert after.edges == before.edges
        symbols = {n.symbol for n in renamed.nodes if n.symbol}
        assert "main" in symbols and "gcd" not in symbols

    @pytest.mark.parametrize("seed", range(50))
    @pytest.mark.parametrize("name", sorted(set(TEMPLATES) | set(SIMILAR_TEMPLATES)))
    def test_renamed_source_gives_identical_graph_json(self, name, seed):
        ast = parse_source({**TEMPLATES, **SIMILAR_TEMPLATES}[name])
        renamed = parse_source(unparse(Mutator(np.random.default_rng(seed)).rename(ast)))
        assert graph_to_json(build_fda(renamed)) == graph_to_json(build_fda(ast))

    def test_permute_preserves_statements(self):
        ast = parse_source(TEMPLATES["sum"])
        for seed in range(5):
            mutator = Mutator(np.random.default_rng(seed))
            assert mutator.swap_candidates(ast)
            permuted = mutator.permute(ast)
            graph = build_fda(parse_source(unparse(permuted)))
            assert sorted(graph.kinds) == sorted(build_fda(ast).kinds)

    def test_dependent_statements_never_swap(self):
        ast = parse_source("int main(){ int a = 1; int b = a; return b; }")
        assert Mutator(np.random.default_rng(0)).swap_candidates(ast) == []

    def test_dead_assignment_is_never_read(self):
        ast = parse_source(TEMPLATES["power"])
        mutated = Mutator(np.random.default_rng(1)).insert_dead_assignment(ast)
        reparsed = parse_source(unparse(mutated))
        assert len(reparsed) == len(ast) + 5
        (fresh,) = {n.symbol for n in reparsed.nodes if n.symbol} - {n.symbol for n in ast.nodes if n.symbol}
        refs = [n for n in reparsed.nodes if n.kind == NodeKind.DeclRefExpr and n.symbol == fresh]
        assert len(refs) == 1
        stores = [n for n in reparsed.nodes if n.kind == NodeKind.BinaryOperator and n.op == "="
                  and reparsed.node(n.children[0]).symbol == fresh]
        assert len(stores) == 1

    def test_jitter_stays_non_negative(self):
        ast = parse_source("int main(){ return 0; }")
        for seed in range(10):
            jittered = Mutator(np.random.default_rng(seed)).jitter_literal(ast)
            assert all(int(n.literal) >= 0 for n in jittered.nodes if n.literal and n.literal.isdigit())


class TestSynthesize:

    def test_counts_and_labels(self, small_cfg):
        programs = synthesize(small_cfg)
        assert len(programs) == 18
        assert Counter(p.task_id for p in programs) == {0: 6, 1: 6, 2: 6}
        assert programs[0].source_id == "00_sum/00_sum_0000"

    def test_deterministic(self, small_cfg):
        first = [p.source for p in synthesize(small_cfg)]
        assert first == [p.source for p in synthesize(small_cfg)]
        other = SynthConfig(num_tasks=3, per_task=6, seed=6)
        assert first != [p.source for p in synthesize(other)]

    def test_similar_mode(self):
        cfg = SynthConfig(num_tasks=2, per_task=5, similar=True)
        assert task_names(cfg) == ["00_sum", "01_sum_squares"]
        assert len(synthesize(cfg)) == 10

    def test_too_many_tasks(self):
        with pytest.raises(ConfigError):
            synthesize(SynthConfig(num_tasks=9))

    def test_bad_rate(self):
        with pytest.raises(ConfigError):
            synthesize(SynthConfig(permute=1.5))

    def test_write_and_ingest(self, tmp_path, small_cfg):
        programs = synthesize(small_cfg)
        write_corpus(programs, tmp_path, small_cfg)
        manifest = read_manifest(tmp_path)
        assert manifest["programs"] == 18
        assert manifest["tasks"] == ["00_sum", "01_factorial", "02_gcd"]
        assert json.loads((tmp_path / "manifest.json").read_text())["synth"]["seed"] == 5
        result = ingest(tmp_path)
        assert result.skipped == []
        assert [(p.source_id, p.task_id) for p in result.programs] == \
            [(p.source_id, p.task_id) for p in programs]
