"""Runs synth, prepare, a short train and eval, then validates report.json."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def run(binary, *args):
    subprocess.run([binary, *args], check=True, stdout=subprocess.DEVNULL)


def main():
    binary, schema_path = sys.argv[1], sys.argv[2]
    schema = json.loads(Path(schema_path).read_text())
    with tempfile.TemporaryDirectory(prefix="lesion_schema_") as tmp:
        work = Path(tmp)
        run(binary, "synth", "--classes", "3", "--per-class", "10", "--size", "16", "--seed", "3",
            "--out", str(work / "data"))
        run(binary, "prepare", "--root", str(work / "data"), "--seed", "3", "--out", str(work / "manifest.json"))
        run(binary, "train", "--manifest", str(work / "manifest.json"), "--model", "vit-cbam", "--epochs", "3",
            "--image-size", "16", "--out", str(work / "train"), "--quiet")
        run(binary, "eval", "--manifest", str(work / "manifest.json"),
            "--checkpoint", str(work / "train" / "checkpoint_best.atnc"), "--out", str(work / "eval"))
        report = json.loads((work / "eval" / "report.json").read_text())
        jsonschema.Draft202012Validator.check_schema(schema)
        jsonschema.validate(report, schema, cls=jsonschema.Draft202012Validator)
    print("report.json conforms to the schema")


if __name__ == "__main__":
    main()
