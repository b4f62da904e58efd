"""Run the CLI once and validate results.json against the published schema."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def main() -> int:
    cli, schema_path = sys.argv[1], sys.argv[2]
    config = {
        "dataset": "synthetic", "model_name": "der", "init_cls": 4, "increment": 2,
        "memory_size": 10, "epochs": 1, "batch_size": 8, "feature_dim": 8,
        "feature": {"n_mels": 32, "clip_seconds": 0.5},
        "synthetic": {"classes": 10, "train_per_class": 4, "test_per_class": 2},
    }
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "config.json"
        cfg.write_text(json.dumps(config))
        out = Path(tmp) / "out"
        subprocess.run([cli, "run", "--config", str(cfg), "--output", str(out)], check=True)
        results = json.loads((out / "results.json").read_text())
    schema = json.loads(Path(schema_path).read_text())
    jsonschema.validate(results, schema)
    assert len(results["curve"]) == 4, results["curve"]
    print("results.json valid:", results["curve"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
