#!/usr/bin/env python3
"""Plot seed-averaged cumulative regret and violations from an aggregate.json."""
import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir")
    ap.add_argument("--out", default=None, help="default: <run_dir>/curves.png")
    args = ap.parse_args()
    agg = json.loads((Path(args.run_dir) / "aggregate.json").read_text())
    fig, (ax_r, ax_v) = plt.subplots(1, 2, figsize=(11, 4))
    for a in agg:
        c = a["curve"]
        label = f"{a['agent']} (eta={a['eta']:g})"
        ax_r.plot(c["episode"], c["cum_regret"], label=label)
        ax_v.plot(c["episode"], c["cum_violations"], label=label)
    ax_r.set(xlabel="episode", ylabel="cumulative regret")
    ax_v.set(xlabel="episode", ylabel="cumulative violations")
    ax_r.legend(fontsize=8)
    fig.tight_layout()
    out = args.out or str(Path(args.run_dir) / "curves.png")
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
