"""Runs every CLI subcommand on a small synthetic setup and validates each
JSON output against the schemas in schemas/."""

import argparse
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def load_schemas(root: Path) -> dict:
    schemas = {}
    for path in sorted(root.glob("*.schema.json")):
        schema = json.loads(path.read_text())
        jsonschema.Draft202012Validator.check_schema(schema)
        schemas[path.name.removesuffix(".schema.json")] = jsonschema.Draft202012Validator(schema)
    return schemas


def run(cli: str, cwd: Path, *args: str, expect: int = 0) -> subprocess.CompletedProcess:
    proc = subprocess.run([cli, "--threads", "1", *args], cwd=cwd, capture_output=True, text=True,
                          env={"SOURCE_DATE_EPOCH": "0", "PATH": "/usr/bin:/bin"})
    if proc.returncode != expect:
        sys.exit(f"{' '.join(args)}: exit {proc.returncode}, expected {expect}\n{proc.stderr}")
    return proc


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--cli", required=True)
    parser.add_argument("--schemas", required=True, type=Path)
    parser.add_argument("--fixture", required=True, type=Path)
    args = parser.parse_args()
    schemas = load_schemas(args.schemas)
    checked = []

    def check(kind: str, path: Path) -> None:
        docs = ([json.loads(line) for line in path.read_text().splitlines() if line.strip()]
                if path.suffix == ".jsonl" else [json.loads(path.read_text())])
        if not docs:
            sys.exit(f"{path}: no records")
        for doc in docs:
            errors = sorted(schemas[kind].iter_errors(doc), key=lambda e: list(e.path))
            if errors:
                sys.exit(f"{path} violates {kind}: {errors[0].message} at {list(errors[0].path)}")
        checked.append(path.name)

    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp)
        (d / "synth.json").write_text(json.dumps(
            {"scene": {"frames": 6}, "detector": {"center_sigma_px": 3.0, "size_sigma_px": 3.0, "fn_rate": 0.1,
                                                 "fp_rate": 0.1, "position_sigma": 0.3, "yaw_sigma": 0.3}}))
        (d / "train.json").write_text(json.dumps({"epochs": 2, "scene": {"frames": 8}, "val_frames": 2}))
        (d / "sweep.json").write_text(json.dumps(
            {"epochs": 2, "scene": {"frames": 8}, "val_frames": 2, "levels": [0, 8, 16], "seeds": [1]}))
        fixture = str(args.fixture)

        run(args.cli, d, "synth-gen", "--config", "synth.json", "--out", "s")
        run(args.cli, d, "derive-2d", "--gt", "s/gt.jsonl", "--calib", "s/calib.json", "--out", "gt2d.jsonl")
        run(args.cli, d, "tune-yaw", "--det3d", "s/det3d.jsonl", "--det2d", "s/det2d.jsonl", "--calib",
            "s/calib.json", "--out", "tuned.jsonl", "--report", "yaw.json")
        run(args.cli, d, "eval", "--gt", "s/gt.jsonl", "--det3d", "tuned.jsonl", "--det2d", "s/det2d.jsonl",
            "--calib", "s/calib.json", "--report", "eval.json")
        run(args.cli, d, "train", "--config", "train.json", "--data", "s", "--out", "train")
        run(args.cli, d, "sweep", "--config", "sweep.json", "--out", "sweep_report.json")
        run(args.cli, d, "fuse-trace", "--weights", fixture, "--input", f"{fixture}/input.json", "--out",
            "trace.json")
        run(args.cli, d, "bench", "prompts", "--config", "train.json", "--seeds", "1", "--out", "bench.json")

        check("calib", d / "s/calib.json")
        for name in ("gt.jsonl", "det3d.jsonl"):
            check("object3d", d / "s" / name)
        check("object3d", d / "tuned.jsonl")
        check("object2d", d / "s/det2d.jsonl")
        check("object2d", d / "gt2d.jsonl")
        check("yaw_report", d / "yaw.json")
        check("eval_report", d / "eval.json")
        check("train_report", d / "train/report.json")
        check("sweep", d / "sweep_report.json")
        check("fuse_trace", d / "trace.json")
        check("bench", d / "bench.json")
        manifests = sorted(p for p in d.rglob("*manifest.json") if "checkpoint" not in p.relative_to(d).parts)
        for m in manifests:
            check("manifest", m)
        if len(manifests) < 8:
            sys.exit(f"expected a manifest per subcommand, found {len(manifests)}")

        for failing, code in ((("derive-2d", "--gt", "missing.jsonl", "--calib", "s/calib.json", "--out", "x.jsonl"), 4),
                              (("eval", "--report", "r.json"), 2)):
            proc = run(args.cli, d, *failing, expect=code)
            err = json.loads(proc.stderr.strip().splitlines()[-1])
            errors = list(schemas["error"].iter_errors(err))
            if errors:
                sys.exit(f"error report violates the schema: {errors[0].message}")
            checked.append(f"error({code})")

    print(f"validated {len(checked)} documents against {len(schemas)} schemas")


if __name__ == "__main__":
    main()
