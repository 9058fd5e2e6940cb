"""Load the bundled toy corpus and look around.

Every dataset is normalized into the same shape: an instance is one
sentence with one or more (target, label) pairs and a train/test split.
"""

from deem import load_corpus, save_corpus, split_view
from deem.config import resolve_path

corpus = load_corpus(resolve_path("pkg:toy_corpus.jsonl"), name="toy-politics")

print(f"corpus {corpus.name!r}: {len(corpus.instances)} instances")
print(f"labels observed: {sorted(label.value for label in corpus.label_set)}")
print(f"train: {len(split_view(corpus, 'train'))}, test: {len(split_view(corpus, 'test'))}")

print("\nfirst three instances:")
for inst in corpus.instances[:3]:
    target, label = inst.stances[0]
    print(f"  [{inst.id}] ({label.value:>7} / {target}) {inst.sentence[:60]}...")

# The canonical interchange format round-trips exactly.
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "copy.jsonl"
    save_corpus(corpus, path)
    again = load_corpus(path, name=corpus.name)
    print(f"\nround-trip identical: {again == corpus}")
