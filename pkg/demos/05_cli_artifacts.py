"""Drive the CLI harness programmatically and inspect its artifacts.

Everything the `python -m sdeopt` entry point does is available as plain
functions: build a RunSpec, call run(), and read the CSV/JSON artifacts it
leaves behind.  This script runs a small solve for each method and then a
side-by-side compare(), printing the files as it goes.

Artifacts land under ./demo_artifacts -- safe to delete afterwards.
"""
import json
from pathlib import Path

from sdeopt.cli_harness import compare, make_spec, run

OUT = Path("demo_artifacts")

spec = make_spec({
    "problem": "scalar-bs",
    "method": "mal-gpro",
    "steps": 50,
    "batch": 50,
    "rate": 1e-2,
    "max_iterations": 200,
    "gradient_tolerance": 0.0,
    "master_seed": 3,
    "output_dir": str(OUT / "single"),
})

summary = run(spec)
print(f"run finished: {summary['iterations']} iterations, "
      f"final objective {summary['final_objective']['mean']:.5f}")
print(f"final control error: {summary['final_control_error']['mean']:.3e}")

out_dir = Path(summary["spec"]["output_dir"])
print(f"\nartifacts in {out_dir}/:")
for name in sorted(p.name for p in out_dir.iterdir()):
    print(f"  {name}")

# convergence.csv has one row per iteration
lines = (out_dir / "convergence.csv").read_text().splitlines()
print(f"\nconvergence.csv ({len(lines) - 1} rows):")
for line in lines[:4]:
    print(f"  {line}")
print("  ...")

# control.csv holds the final control next to the analytic reference
lines = (out_dir / "control.csv").read_text().splitlines()
print(f"\ncontrol.csv head:")
for line in lines[:4]:
    print(f"  {line}")

# --- method comparison ---------------------------------------------------------

base = {
    "problem": "scalar-bs",
    "steps": 50,
    "batch": 50,
    "rate": 1e-2,
    "max_iterations": 200,
    "gradient_tolerance": 0.0,
    "master_seed": 3,
}
specs = [make_spec({**base, "method": m,
                    "output_dir": str(OUT / "cmp" / m)})
         for m in ("mal-gpro", "ad-sgd")]
table = compare(specs, out_dir=OUT / "cmp")

print(f"\ncompare() wrote {OUT / 'cmp' / 'compare.csv'}:")
print((OUT / "cmp" / "compare.csv").read_text().rstrip())

print("\nper-method summaries:")
for row in table:
    print(f"  {row['method']:10s} J = {row['final_J']}  "
          f"E_c = {row['final_E_c']}")
