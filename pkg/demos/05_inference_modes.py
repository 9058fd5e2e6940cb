"""Stage 3b: the discussion prompt and the ablation modes.

The default mode retrieves experts per sentence and asks for a one-round
discussion ending in a final stance.  Variants: fixed global experts,
anonymized roles, plain few-shot, and few-shot with self-consistency
sampling plus a majority vote.
"""

from deem import (
    CompletionClient,
    HashingEncoder,
    InferenceConfig,
    MockBackend,
    build_repository,
    compute_stats,
    experts_by_sentence,
    filter_pool,
    generate_records,
    load_corpus,
    predict,
    select_demonstrations,
    split_view,
)
from deem.cli import load_demo_fixture
from deem.config import resolve_path
from deem.inference import render_inference_prompt

corpus = load_corpus(resolve_path("pkg:toy_corpus.jsonl"), name="toy-politics")
experts, discussions = load_demo_fixture("pkg:demo_fixture.json")
demos = select_demonstrations(corpus, d=2, experts=experts, discussions=discussions)
client = CompletionClient(MockBackend(fallback=True))
records = generate_records(corpus, demos, client, model_id="mock-chat", d=2).records
pool = filter_pool(
    compute_stats(records, corpus), experts_by_sentence(records),
    acc_threshold=0.2, top_k=20,
)
repo = build_repository(pool, corpus, HashingEncoder())

query = split_view(corpus, "test")[0]
print(f"query [{query.id}] gold={query.labels[0].value}: {query.sentence}\n")

print("--- the discussion prompt (tail) ---")
from deem.repository import retrieve_experts

retrieved = retrieve_experts(repo, query.sentence, h=3).experts
prompt = render_inference_prompt(demos, query, retrieved, turns=1, d=2)
print("\n".join(prompt.splitlines()[-5:]))

configs = {
    "deem": InferenceConfig(mode="deem"),
    "fixed top-3 by frequency": InferenceConfig(mode="fixed_experts"),
    "anonymized roles": InferenceConfig(mode="anonymized"),
    "few-shot": InferenceConfig(mode="few_shot"),
    "few-shot + SC (n=3)": InferenceConfig(
        mode="self_consistency", sc_samples=3, sc_temperature=0.7
    ),
}
print("\n--- predictions per mode ---")
for name, config in configs.items():
    prediction = predict(query, repo, pool, client, config, demos, model_id="mock-chat")
    used = ", ".join(expert.display for expert in prediction.experts_used) or "-"
    labels = ", ".join(label.value if label else "?" for label in prediction.labels)
    print(f"{name:26} -> {labels:8} (experts: {used})")
