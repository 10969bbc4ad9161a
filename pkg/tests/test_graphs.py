"""Opinion sub-graph construction: topology, fallbacks, and export form."""

import numpy as np
import pytest

from opfuse.autodiff import Tensor
from opfuse.data import OpinionAnnotation, Record, Span
from opfuse.encoder import EncoderOutput, tokenize
from opfuse.graphs import (GraphEmpty, build_structure, build_subgraph,
                           polarity_one_hot, structure_to_json)
import opfuse.graphs as graphs_mod


def encoder_output(n_tokens, width=8, seed=0):
    rng = np.random.default_rng(seed)
    hidden = rng.standard_normal((n_tokens, width))
    return EncoderOutput(hidden=Tensor(hidden),
                         pooled=Tensor(hidden.mean(axis=0, keepdims=True)))


def span_over(seq, lo, hi):
    """Character span covering tokens lo..hi-1."""
    return Span(seq[lo].span.start, seq[hi - 1].span.end)


def test_full_opinion_five_nodes_eight_edges():
    text = "he says tesla price pump will dump soon imo"
    rec = Record(id="r", split="train", text=text, emotion="disgust")
    seq = tokenize(text)
    opinion = OpinionAnnotation(
        holder=span_over(seq, 0, 1),
        sentiment_expression=span_over(seq, 4, 5),
        target=span_over(seq, 2, 3),
        aspect_term=span_over(seq, 3, 4),
        qualifier=span_over(seq, 8, 9),
        polarity="negative")
    s = build_structure(rec, opinion, seq)
    assert len(s.nodes) == 5
    assert len(s.edges) == 8
    roles = {n.role: i for i, n in enumerate(s.nodes)}
    undirected = {frozenset(e) for e in s.edges}
    assert undirected == {
        frozenset((roles["holder"], roles["sentiment"])),
        frozenset((roles["target"], roles["sentiment"])),
        frozenset((roles["qualifier"], roles["sentiment"])),
        frozenset((roles["aspect"], roles["target"])),
    }
    # every undirected pair appears in both directions
    for src, dst in s.edges:
        assert (dst, src) in s.edges


def test_sentiment_only_single_node_no_edges():
    text = "mooning hard"
    rec = Record(id="r", split="train", text=text, emotion="excitement")
    seq = tokenize(text)
    opinion = OpinionAnnotation(sentiment_expression=span_over(seq, 0, 1),
                                polarity="positive")
    s = build_structure(rec, opinion, seq)
    assert len(s.nodes) == 1 and s.nodes[0].role == "sentiment"
    assert s.edges == ()


def test_holder_target_sentiment_example():
    text = "Tesla I'll buy back in and go Long at $190"
    rec = Record(id="r", split="train", text=text, emotion="optimism")
    seq = tokenize(text)
    opinion = OpinionAnnotation(
        holder=Span(6, 7),                     # "I"
        target=Span(0, 5),                     # "Tesla"
        sentiment_expression=Span(27, 34),     # "go Long"
        polarity="positive")
    graph = build_subgraph(rec, opinion, encoder_output(len(seq)), seq)
    assert graph.num_nodes == 3
    assert len(graph.edges) == 4
    assert graph.edge_attr.shape == (4, 3)
    assert np.array_equal(graph.edge_attr.data,
                          np.tile([1.0, 0.0, 0.0], (4, 1)))


def test_aspect_attaches_to_sentiment_without_target():
    text = "battery life feels great"
    rec = Record(id="r", split="train", text=text, emotion="optimism")
    seq = tokenize(text)
    opinion = OpinionAnnotation(
        aspect_term=span_over(seq, 0, 2),
        sentiment_expression=span_over(seq, 3, 4),
        polarity="positive")
    s = build_structure(rec, opinion, seq)
    roles = {n.role: i for i, n in enumerate(s.nodes)}
    assert frozenset((roles["aspect"], roles["sentiment"])) in {frozenset(e) for e in s.edges}


def test_missing_sentiment_falls_back_to_pooled():
    text = "cash gang checking in"
    rec = Record(id="r", split="train", text=text, emotion="belief")
    seq = tokenize(text)
    opinion = OpinionAnnotation(holder=span_over(seq, 0, 2), polarity="neutral")
    enc = encoder_output(len(seq))
    graph = build_subgraph(rec, opinion, enc, seq)
    roles = {n.role: i for i, n in enumerate(graph.structure.nodes)}
    sent = graph.structure.nodes[roles["sentiment"]]
    assert sent.span is None and sent.token_indices == ()
    assert np.allclose(graph.features.data[roles["sentiment"]],
                       enc.pooled.data.reshape(-1))


def test_unanchorable_span_dropped_with_warning(caplog):
    text = "ab  cd"
    rec = Record(id="r", split="train", text=text, emotion="anger")
    seq = tokenize(text)
    opinion = OpinionAnnotation(sentiment_expression=span_over(seq, 0, 1),
                                holder=Span(2, 4),  # inter-token whitespace
                                polarity="negative")
    with caplog.at_level("WARNING"):
        s = build_structure(rec, opinion, seq)
    assert [n.role for n in s.nodes] == ["sentiment"]
    assert any("dropped" in m for m in caplog.messages)


def test_all_spans_unanchorable_raises_graph_empty():
    text = "ab  cd"
    rec = Record(id="r", split="train", text=text, emotion="anger")
    seq = tokenize(text)
    opinion = OpinionAnnotation(holder=Span(2, 4), polarity="negative")
    with pytest.raises(GraphEmpty):
        build_structure(rec, opinion, seq)


def test_node_features_are_span_pools():
    text = "alpha beta gamma delta"
    rec = Record(id="r", split="train", text=text, emotion="optimism")
    seq = tokenize(text)
    opinion = OpinionAnnotation(
        holder=span_over(seq, 0, 1),
        sentiment_expression=span_over(seq, 1, 3),
        polarity="positive")
    enc = encoder_output(len(seq))
    graph = build_subgraph(rec, opinion, enc, seq)
    roles = {n.role: i for i, n in enumerate(graph.structure.nodes)}
    assert np.allclose(graph.features.data[roles["holder"]], enc.hidden.data[0])
    assert np.allclose(graph.features.data[roles["sentiment"]],
                       enc.hidden.data[1:3].mean(axis=0))


def test_role_embedding_addition():
    text = "alpha beta"
    rec = Record(id="r", split="train", text=text, emotion="optimism")
    seq = tokenize(text)
    opinion = OpinionAnnotation(sentiment_expression=span_over(seq, 0, 1),
                                polarity="positive")
    enc = encoder_output(len(seq))
    role_table = Tensor(np.arange(40.0).reshape(5, 8), requires_grad=True)
    plain = build_subgraph(rec, opinion, enc, seq)
    with_roles = build_subgraph(rec, opinion, enc, seq, role_embedding=role_table)
    delta = with_roles.features.data - plain.features.data
    assert np.allclose(delta, role_table.data[1])  # sentiment is ROLES[1]


def test_alternative_edge_schema_is_data_driven():
    # a fully sentiment-centered schema (aspect loses its target chain)
    schema = (("holder", "sentiment", None),
              ("target", "sentiment", None),
              ("qualifier", "sentiment", None),
              ("aspect", "sentiment", None))
    text = "he says tesla price pump will dump soon imo"
    rec = Record(id="r", split="train", text=text, emotion="disgust")
    seq = tokenize(text)
    opinion = OpinionAnnotation(
        holder=span_over(seq, 0, 1),
        sentiment_expression=span_over(seq, 4, 5),
        target=span_over(seq, 2, 3),
        aspect_term=span_over(seq, 3, 4),
        qualifier=span_over(seq, 8, 9),
        polarity="negative")
    s = build_structure(rec, opinion, seq, edge_schema=schema)
    roles = {n.role: i for i, n in enumerate(s.nodes)}
    undirected = {frozenset(e) for e in s.edges}
    assert frozenset((roles["aspect"], roles["sentiment"])) in undirected
    assert frozenset((roles["aspect"], roles["target"])) not in undirected
    # default schema still chains aspect through target
    default = build_structure(rec, opinion, seq)
    assert default.edges != s.edges
    assert graphs_mod.STAR_TOPOLOGY[3] == ("aspect", "target", "sentiment")


def test_polarity_one_hot():
    assert polarity_one_hot("positive").tolist() == [1.0, 0.0, 0.0]
    assert polarity_one_hot("negative").tolist() == [0.0, 1.0, 0.0]
    assert polarity_one_hot("neutral").tolist() == [0.0, 0.0, 1.0]


def test_structure_export_shape():
    text = "Tesla going up"
    rec = Record(id="rx", split="dev", text=text, emotion="optimism")
    seq = tokenize(text)
    opinion = OpinionAnnotation(target=Span(0, 5),
                                sentiment_expression=span_over(seq, 1, 3),
                                polarity="positive")
    s = build_structure(rec, opinion, seq)
    obj = structure_to_json(rec, [s])
    assert obj["id"] == "rx"
    g = obj["graphs"][0]
    assert g["polarity"] == "positive"
    assert {n["role"] for n in g["nodes"]} == {"sentiment", "target"}
    for node in g["nodes"]:
        assert node["token_indices"]
    assert sorted(map(tuple, g["edges"])) == sorted([(0, 1), (1, 0)]) or len(g["edges"]) == 2
