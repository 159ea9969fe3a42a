import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pastegan.scenegraph import (IMAGE_CATEGORY, IN_IMAGE_PREDICATE, LayoutBox, ParseError,
                                 SceneGraph, StateError, StructureError, Vocab,
                                 VocabularyError, augment_with_image_node,
                                 in_image_edge_ids, parse_scene_graph,
                                 serialize_scene_graph, validate)


class TestVocab:
    def test_create_appends_reserved_names_last(self, toy_vocab):
        assert toy_vocab.object_categories[-1] == IMAGE_CATEGORY
        assert toy_vocab.predicate_categories[-1] == IN_IMAGE_PREDICATE
        assert toy_vocab.image_category_id == 4
        assert toy_vocab.in_image_predicate_id == 3

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            Vocab.create(["a", "a"], ["p"])

    def test_reserved_must_be_last(self):
        with pytest.raises(ValueError):
            Vocab((IMAGE_CATEGORY, "a"), ("p", IN_IMAGE_PREDICATE))

    def test_lookup(self, toy_vocab):
        assert toy_vocab.object_id("river") == 1
        assert toy_vocab.predicate_id("on") == 0
        with pytest.raises(VocabularyError):
            toy_vocab.object_id("submarine")

    def test_dict_round_trip(self, toy_vocab):
        assert Vocab.from_dict(toy_vocab.to_dict()) == toy_vocab


class TestParse:
    def test_boat_on_river(self, toy_vocab):
        g = parse_scene_graph('{"objects":["boat","river"],"edges":[["boat","on","river"]]}',
                              toy_vocab)
        assert g.objects == (0, 1)
        assert g.edges == ((0, 0, 1),)
        assert not g.augmented

    def test_single_object_no_edges(self, toy_vocab):
        g = parse_scene_graph('{"objects":["sky"],"edges":[]}', toy_vocab)
        assert g.num_objects == 1 and g.num_edges == 0

    def test_empty_objects_rejected(self, toy_vocab):
        with pytest.raises(StructureError):
            parse_scene_graph('{"objects":[],"edges":[]}', toy_vocab)

    def test_malformed_json_reports_offset(self, toy_vocab):
        with pytest.raises(ParseError) as err:
            parse_scene_graph('{"objects":["sky"],,}', toy_vocab)
        assert err.value.offset is not None

    def test_unknown_category_named(self, toy_vocab):
        with pytest.raises(VocabularyError, match="submarine"):
            parse_scene_graph('{"objects":["submarine"],"edges":[]}', toy_vocab)

    def test_unknown_predicate_named(self, toy_vocab):
        with pytest.raises(VocabularyError, match="below"):
            parse_scene_graph('{"objects":["boat","river"],"edges":[["boat","below","river"]]}',
                              toy_vocab)

    def test_dangling_index(self, toy_vocab):
        with pytest.raises(StructureError):
            parse_scene_graph('{"objects":["boat"],"edges":[[0,"on",3]]}', toy_vocab)

    def test_integer_endpoints(self, toy_vocab):
        g = parse_scene_graph('{"objects":["boat","river"],"edges":[[0,"on",1]]}', toy_vocab)
        assert g.edges == ((0, 0, 1),)

    def test_ambiguous_name_endpoint(self, toy_vocab):
        text = '{"objects":["boat","boat"],"edges":[["boat","on",1]]}'
        with pytest.raises(StructureError, match="ambiguous"):
            parse_scene_graph(text, toy_vocab)

    def test_self_edge_rejected(self, toy_vocab):
        with pytest.raises(StructureError):
            parse_scene_graph('{"objects":["boat","river"],"edges":[[0,"on",0]]}', toy_vocab)

    def test_reserved_name_rejected_in_plain_graph(self, toy_vocab):
        with pytest.raises(VocabularyError):
            parse_scene_graph(json.dumps({"objects": [IMAGE_CATEGORY], "edges": []}),
                              toy_vocab)

    def test_duplicate_edges_allowed(self, toy_vocab):
        text = '{"objects":["boat","river"],"edges":[[0,"on",1],[0,"on",1]]}'
        g = parse_scene_graph(text, toy_vocab)
        assert g.num_edges == 2


class TestAugment:
    def test_counts(self, toy_vocab):
        g = SceneGraph((0, 1, 2), ((0, 0, 1), (1, 1, 2)))
        a = augment_with_image_node(g, toy_vocab)
        assert a.num_objects == 4 and a.num_edges == 5
        assert a.objects[:3] == g.objects and a.edges[:2] == g.edges
        assert a.objects[-1] == toy_vocab.image_category_id

    def test_single_object(self, toy_vocab):
        a = augment_with_image_node(SceneGraph((2,)), toy_vocab)
        assert a.num_objects == 2 and a.num_edges == 1
        assert a.edges[0] == (0, toy_vocab.in_image_predicate_id, 1)

    def test_not_idempotent(self, toy_vocab):
        a = augment_with_image_node(SceneGraph((0,)), toy_vocab)
        with pytest.raises(StateError):
            augment_with_image_node(a, toy_vocab)

    def test_in_image_edge_ids(self, toy_vocab):
        g = SceneGraph((0, 1), ((0, 0, 1),))
        a = augment_with_image_node(g, toy_vocab)
        assert in_image_edge_ids(a, toy_vocab) == [1, 2]


class TestValidate:
    def test_valid_graph(self, toy_vocab):
        g = SceneGraph((0, 1), ((0, 0, 1),))
        assert validate(g, toy_vocab) == []

    def test_self_edge(self, toy_vocab):
        g = SceneGraph((0, 1), ((0, 0, 0),))
        assert len(validate(g, toy_vocab)) == 1

    def test_category_out_of_range(self, toy_vocab):
        g = SceneGraph((99,), ())
        assert len(validate(g, toy_vocab)) == 1

    def test_augmented_missing_in_image_edge(self, toy_vocab):
        g = SceneGraph((0, 1, toy_vocab.image_category_id),
                       ((0, toy_vocab.in_image_predicate_id, 2),), augmented=True)
        problems = validate(g, toy_vocab)
        assert any("object 1" in p for p in problems)

    def test_validate_after_augment_stays_clean(self, toy_vocab):
        g = SceneGraph((0, 1, 3), ((0, 0, 1), (2, 2, 0)))
        assert validate(g, toy_vocab) == []
        assert validate(augment_with_image_node(g, toy_vocab), toy_vocab) == []


class TestLayoutBox:
    def test_valid(self):
        b = LayoutBox(0.1, 0.2, 0.6, 0.9)
        assert b.as_tuple() == (0.1, 0.2, 0.6, 0.9)

    @pytest.mark.parametrize("coords", [(0.5, 0.2, 0.5, 0.9), (-0.1, 0.2, 0.6, 0.9),
                                        (0.1, 0.9, 0.6, 0.2), (0.1, 0.2, 1.1, 0.9)])
    def test_invalid(self, coords):
        with pytest.raises(ValueError):
            LayoutBox(*coords)


@st.composite
def random_graphs(draw, vocab):
    n = draw(st.integers(min_value=1, max_value=6))
    objects = tuple(draw(st.integers(0, vocab.num_objects - 2)) for _ in range(n))
    edges = []
    if n >= 2:
        n_edges = draw(st.integers(0, 6))
        for _ in range(n_edges):
            s = draw(st.integers(0, n - 1))
            o = draw(st.integers(0, n - 1).filter(lambda x: x != s))
            p = draw(st.integers(0, vocab.num_predicates - 2))
            edges.append((s, p, o))
    return SceneGraph(objects, tuple(edges))


class TestRoundTrip:
    @settings(max_examples=60, deadline=None)
    @given(data=st.data())
    def test_parse_serialize_round_trip(self, data):
        vocab = Vocab.create(["boat", "river", "sky", "person"], ["on", "near", "under"])
        g = data.draw(random_graphs(vocab))
        assert validate(g, vocab) == []
        assert parse_scene_graph(serialize_scene_graph(g, vocab), vocab) == g

    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_round_trip_augmented(self, data):
        vocab = Vocab.create(["boat", "river", "sky", "person"], ["on", "near", "under"])
        g = augment_with_image_node(data.draw(random_graphs(vocab)), vocab)
        assert parse_scene_graph(serialize_scene_graph(g, vocab), vocab) == g

    @settings(max_examples=40, deadline=None)
    @given(data=st.data())
    def test_augment_counts_and_validity(self, data):
        vocab = Vocab.create(["boat", "river", "sky", "person"], ["on", "near", "under"])
        g = data.draw(random_graphs(vocab))
        a = augment_with_image_node(g, vocab)
        assert a.num_objects == g.num_objects + 1
        assert a.num_edges == g.num_edges + g.num_objects
        assert validate(a, vocab) == []
