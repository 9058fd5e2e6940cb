"""Stage 3a: index sentence-expert pairs and retrieve experts for new text.

Each filtered train sentence becomes an entry keyed by its embedding.  A
new sentence is scored against every entry with a softmax over dot
products, and the experts of the most similar sentences are collected
(deduplicated) until h experts are found.
"""

from deem import (
    CompletionClient,
    HashingEncoder,
    MockBackend,
    build_repository,
    compute_stats,
    experts_by_sentence,
    filter_pool,
    generate_records,
    load_corpus,
    retrieve_experts,
    select_demonstrations,
)
from deem.cli import load_demo_fixture
from deem.config import resolve_path

corpus = load_corpus(resolve_path("pkg:toy_corpus.jsonl"), name="toy-politics")
experts, discussions = load_demo_fixture("pkg:demo_fixture.json")
demos = select_demonstrations(corpus, d=2, experts=experts, discussions=discussions)
records = generate_records(
    corpus, demos, CompletionClient(MockBackend(fallback=True)), model_id="mock-chat", d=2
).records
pool = filter_pool(
    compute_stats(records, corpus), experts_by_sentence(records),
    acc_threshold=0.2, top_k=20,
)

encoder = HashingEncoder(dim=256)
repo = build_repository(pool, corpus, encoder)
print(f"repository: {len(repo.entries)} entries, encoder {repo.encoder_id}")

for sentence in [
    "The tunnel project finally puts the harbor crews back to work.",
    "Another stadium subsidy while the library loses its reading room.",
    "Town hall on the new transit line is this Thursday evening.",
]:
    result = retrieve_experts(repo, sentence, h=3)
    print(f"\nquery: {sentence}")
    print(f"  experts: {[expert.display for expert in result.experts]}")
    for source_id, score in result.sources:
        entry = next(e for e in repo.entries if e.instance_id == source_id)
        print(f"  from [{source_id}] (sim {score:.4f}) {entry.sentence[:55]}...")
