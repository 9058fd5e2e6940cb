"""Stage 1: prompt a model to propose experts for every train sentence.

Two held-out train instances become demonstrations with manually written
expert lists; the model answers each remaining train sentence with an
``Experts:`` line and a ``Stance:`` line.  Here the deterministic mock
backend stands in for a live model, so this runs offline.
"""

from deem import CompletionClient, MockBackend, generate_records, load_corpus, select_demonstrations
from deem.cli import load_demo_fixture
from deem.config import resolve_path
from deem.expertgen import render_stage1_prompt

corpus = load_corpus(resolve_path("pkg:toy_corpus.jsonl"), name="toy-politics")
experts, discussions = load_demo_fixture("pkg:demo_fixture.json")
demos = select_demonstrations(corpus, d=2, experts=experts, discussions=discussions)

print("demonstrations:", [demo.instance.id for demo in demos])

query = [inst for inst in corpus.instances if inst.split == "train"][2]
print("\n--- the prompt sent for", query.id, "---")
print(render_stage1_prompt(demos, query, d=2))

client = CompletionClient(MockBackend(fallback=True))
result = generate_records(corpus, demos, client, model_id="mock-chat", d=2)

print(f"\n--- generated {len(result.records)} records "
      f"({result.parse_failures} parse failures) ---")
for record in result.records[:5]:
    names = ", ".join(expert.display for expert in record.experts)
    predicted = ", ".join(label.value for label in record.predicted)
    print(f"  {record.instance_id}: [{names}] -> {predicted}")

distinct = {expert.canonical for record in result.records for expert in record.experts}
print(f"\ndistinct canonical experts proposed: {len(distinct)}")
