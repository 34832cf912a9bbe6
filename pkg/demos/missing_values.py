"""Show how informative missingness moves a feature up the importance table.

One column's values are uninformative, but the fact that it is missing
tracks the label. The three importance modes tell three different
stories about that column, and the stratified report separates the
observed-value signal from the missing-bin signal explicitly.
"""

from pathlib import Path

import numpy as np

from namlite import explain
from namlite.core import sigmoid
from namlite.train import TrainConfig, fit

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

# --- data: lab value missing mostly for positive cases ----------------------------

rng = np.random.default_rng(4)
n = 3000
vitals = rng.uniform(0, 1, n)
y = (rng.random(n) < sigmoid(4.5 * (vitals - 0.5))).astype(float)
lab = rng.uniform(0, 1, n)
lab[rng.random(n) < np.where(y == 1, 0.55, 0.05)] = np.nan
table = {"lab": lab, "vitals": vitals}
for j in range(3):
    col = rng.uniform(0, 1, n)
    col[rng.random(n) < 0.3] = np.nan
    table[f"noise{j}"] = col
print(f"lab is missing for {np.isnan(lab).mean():.0%} of rows")

# --- fit and compare the three modes ----------------------------------------------

cfg = TrainConfig(
    task="classification",
    n_val_splits=3,
    max_epochs=40,
    early_stop_patience=6,
    embedding_dim=8,
    hidden_sizes=(16,),
    max_bins=16,
    seed=0,
)
model = fit(table, y, cfg)

for mode in ("include", "ignore"):
    report = explain.feature_importance(model, table, mode=mode)
    ranked = ", ".join(f"{e.name} {e.mean:.2f}" for e in report.entries[:3])
    print(f"{mode:>7}: {ranked}")

stratified = explain.feature_importance(model, table, mode="stratify")
print("stratify: observed score | missing score")
for entry in stratified.entries:
    print(f"  {entry.name:>7}: {entry.mean:.3f} | {entry.missing_mean:.3f}")
(OUT / "missing_importance.svg").write_text(
    explain.render_svg(stratified, "importance-bars")
)

# --- the missing bin itself --------------------------------------------------------

export = explain.shape_function(model, "lab", include_missing=True)
missing_effect = float(export.blocks[0].mean[0])
print(f"lab missing-bin contribution to the log odds: {missing_effect:+.2f}")
(OUT / "missing_shape_lab.svg").write_text(explain.render_svg(export, "shape-line"))
print(f"wrote importance and shape plots to {OUT}")
