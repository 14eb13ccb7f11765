"""Identification walk-through on the four-node mediator graph with a latent C <-> Y edge.

Prints backdoor paths, roles, the adjustment set and the rendered estimand,
then shows the plausible-subgraph search on a graph with a latent T <-> Y edge.
"""

from pathlib import Path

from causalpipe.graph import read_graph
from causalpipe.identification import (
    EstimandSpec,
    backdoor_paths,
    classify_variables,
    most_plausible_backdoor_subgraph,
    render_estimand,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def show(path):
    g = read_graph(path)
    print(f"== {path.name}")
    for p in backdoor_paths(g, "T", "Y"):
        print(f"  backdoor path {p.pretty()}")
    report = classify_variables(g, "T", "Y")
    for v, role in report.roles.items():
        print(f"  {v}: {role}")
    sub = most_plausible_backdoor_subgraph(g, "T", "Y")
    if sub.removed:
        dropped = ", ".join(f"{a} <-> {b}" for a, b in sub.removed)
        print(f"  not identifiable; dropping {dropped} keeps plausibility ratio {sub.ratio:.3f}")
    target = sub.graph
    spec = EstimandSpec("T", "Y", [(1, 0)], sub.adjustment_set)
    print("  " + render_estimand(target, spec).replace("\n", "\n  "))


if __name__ == "__main__":
    show(CONFIGS / "mediator.graph")
    show(CONFIGS / "latent_ty.graph")
