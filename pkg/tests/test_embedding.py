import json

import pytest

from gridprompt.embedding import (
    EmbeddingFormat,
    EmbeddingParseError,
    InvalidResponse,
    embed_grid,
    encode_solution,
    parse_grid,
    parse_solution_doc,
)
from gridprompt.grid_model import from_hetero, to_hetero
from gridprompt.scenario_gen import MutationSpec, mutate
from gridprompt.solvers import solve_opf

GRAPH = EmbeddingFormat("graph")
TABLE = EmbeddingFormat("table")


class TestEmbedGrid:
    def test_case9_graph_edge_count(self, case9):
        doc = json.loads(embed_grid(to_hetero(case9), GRAPH))
        # 3 load + 2 gen + 1 slack + 18 line-end edges
        assert len(doc["edges"]) == 3 + 2 + 1 + 18

    def test_table_has_no_edges_and_is_shorter(self, case9, case30):
        for case in (case9, case30):
            h = to_hetero(case)
            graph = embed_grid(h, GRAPH)
            table = embed_grid(h, TABLE)
            assert "edges" not in json.loads(table)
            assert len(table) < len(graph)

    def test_empty_load_table_keeps_empty_key(self, case9):
        h = to_hetero(case9.with_loads(()))
        doc = json.loads(embed_grid(h, TABLE))
        assert doc["load"] == []

    def test_deterministic_bytes(self, case9):
        h = to_hetero(case9)
        assert embed_grid(h, GRAPH) == embed_grid(h, GRAPH)
        assert embed_grid(h, TABLE) == embed_grid(h, TABLE)

    def test_schema_field_present(self, case9):
        doc = json.loads(embed_grid(to_hetero(case9), TABLE))
        assert doc["schema"] == "gridprompt/v1"


class TestParseGrid:
    @pytest.mark.parametrize("fmt", [GRAPH, TABLE], ids=["graph", "table"])
    def test_fixture_round_trip(self, case9, case30, fmt):
        for case in (case9, case30):
            t = embed_grid(to_hetero(case), fmt)
            assert embed_grid(parse_grid(t), fmt) == t

    @pytest.mark.parametrize("fmt", [GRAPH, TABLE], ids=["graph", "table"])
    def test_mutation_round_trips(self, case9, fmt):
        spec = MutationSpec(0.2, seed=11)
        for i in range(100):
            h = to_hetero(mutate(case9, spec, i))
            t = embed_grid(h, fmt)
            assert embed_grid(parse_grid(t), fmt) == t

    def test_round_trip_recovers_case(self, case9):
        for fmt in (GRAPH, TABLE):
            t = embed_grid(to_hetero(case9), fmt)
            assert from_hetero(parse_grid(t)) == case9

    def test_missing_bus_reference_named(self, case9):
        doc = json.loads(embed_grid(to_hetero(case9), TABLE))
        doc["load"][0]["bus"] = 77
        with pytest.raises(EmbeddingParseError, match=r"\$\.load\[0\]\.bus"):
            parse_grid(json.dumps(doc))

    def test_graph_dangling_edge_named(self, case9):
        doc = json.loads(embed_grid(to_hetero(case9), GRAPH))
        doc["edges"][0][3] = 99
        with pytest.raises(EmbeddingParseError, match=r"\$\.edges\[0\]"):
            parse_grid(json.dumps(doc))

    def test_not_json(self):
        with pytest.raises(EmbeddingParseError, match="not valid JSON"):
            parse_grid("hello")

    def test_wrong_schema(self):
        with pytest.raises(EmbeddingParseError, match="schema"):
            parse_grid('{"schema": "other/v9", "kind": "table"}')


class TestSolutionDoc:
    @pytest.fixture(scope="class")
    @staticmethod
    def opf9(case9):
        return solve_opf(case9)

    def test_pure_json_parses(self, opf9):
        text = encode_solution(opf9)
        doc = parse_solution_doc(text)
        assert len(doc.gen) == 2
        assert len(doc.slack) == 1
        assert len(doc.bus) == 9

    def test_json_wrapped_in_prose(self, opf9):
        text = f"Here is the solution: {encode_solution(opf9)} hope this helps"
        doc = parse_solution_doc(text)
        assert len(doc.bus) == 9

    def test_nested_braces_and_strings_survive_extraction(self):
        inner = '{"gen":[{"id":0,"p_mw":1,"q_mvar":2}],"slack":[{"id":1,"p_mw":3,"q_mvar":4}],"bus":[{"id":0,"vm_pu":1.0,"va_deg":0.0}],"note":"curly } inside"}'
        doc = parse_solution_doc("blah {not json} then " + inner + " tail")
        assert doc.slack[0] == (1, 3.0, 4.0)

    def test_prose_without_json_is_invalid(self):
        with pytest.raises(InvalidResponse, match="no JSON object"):
            parse_solution_doc("To solve OPF you should linearize the equations.")

    def test_missing_section_is_invalid(self, opf9):
        doc = json.loads(encode_solution(opf9))
        del doc["slack"]
        with pytest.raises(InvalidResponse, match="slack"):
            parse_solution_doc(json.dumps(doc))

    def test_non_numeric_value_is_invalid(self, opf9):
        doc = json.loads(encode_solution(opf9))
        doc["gen"][0]["p_mw"] = "about ninety"
        with pytest.raises(InvalidResponse):
            parse_solution_doc(json.dumps(doc))

    def test_nan_is_invalid(self, opf9):
        text = encode_solution(opf9)
        bad = text.replace(text.split('"p_mw":')[1].split(",")[0], "NaN", 1)
        with pytest.raises(InvalidResponse):
            parse_solution_doc(bad)

    def test_encode_is_canonical(self, opf9):
        assert encode_solution(opf9) == encode_solution(opf9)
