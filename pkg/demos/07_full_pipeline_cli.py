"""Drive the whole pipeline through the CLI, twice, to show the cache.

The first run resolves every completion through the (mock) provider; the
second replays entirely from the content-addressed cache — zero provider
calls — and writes byte-identical artifacts.
"""

import json
import tempfile
from pathlib import Path

from deem.cli import main

CONFIG = str(Path(__file__).resolve().parent.parent / "configs" / "toy_mock.json")

with tempfile.TemporaryDirectory() as tmp:
    cache = f"{tmp}/cache"

    def run_all(out_dir):
        code = main(
            [
                "run-all",
                "--config", CONFIG,
                "--set", f"output_dir={out_dir}",
                "--set", f"cache_dir={cache}",
                "--mock",
            ]
        )
        assert code == 0

    print("first run (cold cache)...")
    run_all(f"{tmp}/run1")
    print("second run (warm cache)...")
    run_all(f"{tmp}/run2")

    for name in ["records.jsonl", "pool.json", "repository.jsonl",
                 "predictions.jsonl", "report.json"]:
        first = Path(f"{tmp}/run1/{name}").read_bytes()
        second = Path(f"{tmp}/run2/{name}").read_bytes()
        print(f"  {name:18} byte-identical: {first == second}")

    report = json.loads(Path(f"{tmp}/run1/report.json").read_text())
    print("\nfinal scores:")
    for item in report["reports"]:
        print(f"  {item['target']:14} f1_avg={item['f1_avg']:.4f}")
