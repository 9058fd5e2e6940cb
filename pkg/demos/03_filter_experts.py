"""Stage 2: keep the experienced experts.

An expert survives if its prediction accuracy over the records it appears
in clears the threshold; the survivors are then ranked by occurrence count
and cut to the top-k.  A sweep over both knobs shows the trade-off.
"""

from deem import (
    CompletionClient,
    MockBackend,
    compute_stats,
    experts_by_sentence,
    filter_pool,
    generate_records,
    load_corpus,
    select_demonstrations,
    sweep_thresholds,
)
from deem.cli import load_demo_fixture
from deem.config import resolve_path

corpus = load_corpus(resolve_path("pkg:toy_corpus.jsonl"), name="toy-politics")
experts, discussions = load_demo_fixture("pkg:demo_fixture.json")
demos = select_demonstrations(corpus, d=2, experts=experts, discussions=discussions)
records = generate_records(
    corpus, demos, CompletionClient(MockBackend(fallback=True)), model_id="mock-chat", d=2
).records

stats = compute_stats(records, corpus)
print(f"{'expert':20} {'count':>5} {'correct':>7} {'acc':>6}")
for s in sorted(stats, key=lambda s: -s.count):
    print(f"{s.expert.canonical:20} {s.count:>5} {int(s.correct):>7} {s.acc:>6.2f}")

pool = filter_pool(stats, experts_by_sentence(records), acc_threshold=0.2, top_k=20)
print(f"\npool (threshold 0.2, top 20): {[s.expert.canonical for s in pool.experts]}")
print(f"sentences needing the fallback: {len(pool.fallback_ids)}")

print("\nsweep over threshold x top-k:")
print(f"{'thr':>4} {'k':>3} {'pool':>4} {'mean_acc':>8} {'coverage':>8}")
for cell in sweep_thresholds(records, corpus, [0.1, 0.3, 0.5], [3, 5, 20]):
    print(
        f"{cell.acc_threshold:>4.1f} {cell.top_k:>3} {cell.pool_size:>4} "
        f"{cell.mean_acc:>8.3f} {cell.coverage:>8.3f}"
    )
