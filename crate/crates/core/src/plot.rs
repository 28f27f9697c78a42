//! Generates a matplotlib script for a trajectory CSV: states, controls and
//! switching functions on separate panels, switching times marked.

/// Python source that plots `csv_name` (resolved next to the script).
pub fn plot_script(csv_name: &str, title: &str, n: usize, m: usize) -> String {
    let states: Vec<String> = (1..=n).map(|i| format!("\"x{i}\"")).collect();
    let controls: Vec<String> = (1..=m).map(|i| format!("\"u{i}\"")).collect();
    let phis: Vec<String> = (1..=m).map(|i| format!("\"phi{i}\"")).collect();
    format!(
        r#"#!/usr/bin/env python3
# Plots a shooting trajectory. Usage: python3 {script} [output.png]
import csv
import os
import sys

import matplotlib

if len(sys.argv) > 1:
    matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
CSV = os.path.join(HERE, "{csv}")
STATES = [{states}]
CONTROLS = [{controls}]
SWITCHING = [{phis}]

with open(CSV, newline="", encoding="utf-8") as f:
    rows = list(csv.DictReader(f))

arcs = sorted({{int(r["arc"]) for r in rows}})
switch_times = [float(r["t"]) for r in rows if r["side"] == "+"]


def series(arc, name):
    pts = [(float(r["t"]), float(r[name])) for r in rows if int(r["arc"]) == arc]
    pts.sort()
    return [p[0] for p in pts], [p[1] for p in pts]


def panel(ax, names, label):
    for name in names:
        for k, arc in enumerate(arcs):
            t, v = series(arc, name)
            ax.plot(t, v, color="C%d" % names.index(name), label=name if k == 0 else None)
    for ts in switch_times:
        ax.axvline(ts, color="0.6", linestyle=":", linewidth=0.8)
    ax.set_ylabel(label)
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, alpha=0.3)


fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 8))
panel(axes[0], STATES, "state")
panel(axes[1], CONTROLS, "control")
panel(axes[2], SWITCHING, "switching function")
axes[2].axhline(0.0, color="k", linewidth=0.6)
axes[2].set_xlabel("t")
fig.suptitle("{title}")
fig.tight_layout()
if len(sys.argv) > 1:
    fig.savefig(sys.argv[1], dpi=150)
else:
    plt.show()
"#,
        script = "plot.py",
        csv = csv_name,
        states = states.join(", "),
        controls = controls.join(", "),
        phis = phis.join(", "),
        title = title.replace('"', "'"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_every_column() {
        let s = plot_script("traj.csv", "goddard", 3, 1);
        assert!(s.contains(r#"STATES = ["x1", "x2", "x3"]"#));
        assert!(s.contains(r#"CONTROLS = ["u1"]"#));
        assert!(s.contains(r#"SWITCHING = ["phi1"]"#));
        assert!(s.contains("\"traj.csv\""));
    }
}
