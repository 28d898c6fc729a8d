"""Grid search over (patch length, horizon) with a heatmap CSV.

Each cell is an independent seeded run; results stream to a JSONL file
as they finish, so an interrupted sweep resumes where it stopped instead
of recomputing.  The emitted heatmap CSV is a horizons-by-patch-lengths
table of test MSE, ready for any plotting tool.
"""

import tempfile
from pathlib import Path

from koopcast.data import SimulatorConfig
from koopcast.experiment import ExperimentConfig, emit_heatmap_csv, grid_search

out_dir = Path(tempfile.mkdtemp(prefix="grid_demo_"))
results = out_dir / "records.jsonl"

base = ExperimentConfig(
    simulator=SimulatorConfig(system="van_der_pol", t_end=10.0),
    variant="patch",
    context_len=32,
    d_model=8,
    n_layers=1,
    n_heads=2,
    ffn_width=16,
    epochs=30,
    learning_rate=1e-3,
    seed=0,
)

records = grid_search(
    base,
    p_values=[4, 8, 16],
    h_values=[1, 3, 5],
    d_model_values=[8],
    results_path=str(results),
)
print(f"{len(records)} records (9 cells x train/test) -> {results}")

heatmap = out_dir / "heatmap_test_mse.csv"
emit_heatmap_csv(heatmap, records, col_key="patch_len", value="mse", split="test")
print(f"\n{heatmap}:")
print(heatmap.read_text())

# running this script again reuses the JSONL file and recomputes nothing:
again = grid_search(base, [4, 8, 16], [1, 3, 5], [8], results_path=str(results))
print(f"re-run returned {len(again)} records without retraining any cell")
