"""Score predictions: per-target F1 on favor/against plus the neutral slice.

The headline number per target is the mean of the favor F1 and the
against F1; gold-neutral sentences get their own recall/F1 readout, which
is where models that over-commit to favor/against lose points.
"""

from deem import (
    CompletionClient,
    HashingEncoder,
    InferenceConfig,
    MockBackend,
    bias_subset_report,
    build_repository,
    compute_stats,
    evaluate_run,
    experts_by_sentence,
    f1_avg,
    filter_pool,
    generate_records,
    load_corpus,
    predict_batch,
    select_demonstrations,
    split_view,
)
from deem.cli import load_demo_fixture
from deem.config import resolve_path
from deem.corpus import StanceLabel
from deem.evaluation import format_report_table

# The metric itself, on a hand-checkable vector.
golds = [StanceLabel.FAVOR, StanceLabel.FAVOR, StanceLabel.AGAINST, StanceLabel.NEUTRAL]
preds = [StanceLabel.FAVOR, StanceLabel.AGAINST, StanceLabel.AGAINST, StanceLabel.FAVOR]
favor, against, avg = f1_avg(golds, preds)
print(f"worked example: f1_favor={favor:.4f} f1_against={against:.4f} f1_avg={avg:.4f}\n")

# End to end on the toy corpus with the mock backend.
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
predictions = predict_batch(
    split_view(corpus, "test"), repo, pool, client,
    InferenceConfig(mode="deem"), demos, model_id="mock-chat",
)

reports = evaluate_run(corpus, predictions)
print(format_report_table(reports))

neutral = bias_subset_report(corpus, predictions)
print(f"neutral slice: recall={neutral.recall_neutral:.3f} "
      f"f1={neutral.f1_neutral:.3f} over {neutral.n_neutral} sentences")
