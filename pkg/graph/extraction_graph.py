from langgraph.graph import END, StateGraph

from agents.audio_loader_agent import audio_loader_agent
from agents.glottal_flow_agent import glottal_flow_agent
from agents.latent_agent import latent_agent
from agents.model_fit_agent import model_fit_agent
from agents.phase_feature_agent import phase_feature_agent
from agents.proxy_score_agent import proxy_score_agent
from graph.state import ExtractionState

STAGES = [
    ("AudioLoaderAgent", audio_loader_agent),
    ("GlottalFlowAgent", glottal_flow_agent),
    ("ModelFitAgent", model_fit_agent),
    ("PhaseFeatureAgent", phase_feature_agent),
    ("ProxyScoreAgent", proxy_score_agent),
    ("LatentAgent", latent_agent),
]


def build_extraction_graph():
    """Linear per-recording workflow; a failed stage sets `error` and the rest pass through"""
    builder = StateGraph(ExtractionState)

    for name, node in STAGES:
        builder.add_node(name, node)

    builder.set_entry_point(STAGES[0][0])
    for (a, _), (b, _) in zip(STAGES[:-1], STAGES[1:]):
        builder.add_edge(a, b)
    builder.add_edge(STAGES[-1][0], END)

    return builder.compile()


def run_extraction(graph, initial_state: ExtractionState) -> ExtractionState:
    result = graph.invoke(initial_state)
    # Handle both dict and ExtractionState results
    if isinstance(result, ExtractionState):
        return result
    return ExtractionState.model_validate(result)


if __name__ == "__main__":
    print("🔗 Building extraction graph...")
    graph = build_extraction_graph()
    print("✅ Graph built successfully!")
    print(f"Graph nodes: {list(graph.nodes.keys())}")
