"""Allocate the non-life case study down to lines of business.

The nested Euler allocation reaches every premium, reserve and CAT leaf.
Premium and reserve leaves already belong to one LoB. CAT sub-risks and lapse
are spread over LoBs market-driven:

* CAT: each event is assigned to one LoB (motor to 1, marine to 3, fire and the
  whole natural-catastrophe block to 4).
* Lapse: the insurer's per-LoB lapse drivers are not published. The weights
  below are placeholders backed out of the published lapse column, so that part
  of the output is illustrative only.

Run: python3 demos/nonlife_lob.py
"""
import sfalloc
from sfalloc import euler_allocate_tree, redistribute

tree = sfalloc.load_fixture("nonlife_case")
alloc = euler_allocate_tree(tree)

print(f"BSCR {alloc.total:,.0f}")
for n in tree.children(tree.root):
    print(f"  {n:8s} {alloc[n].allocated:>14,.0f}")
for n in tree.children("nonlife"):
    print(f"    {n:8s} {alloc[n].allocated:>12,.0f}  (AR {alloc[n].level_ratio:.4f})")

lobs = [f"lob{k}" for k in range(1, 10)]
prem = {lob: alloc[f"{lob}_prem"].allocated for lob in lobs}
res = {lob: alloc[f"{lob}_res"].allocated for lob in lobs}

cat_drivers = {
    "mm_motor": {"lob1": 1.0},
    "mm_marine": {"lob3": 1.0},
    "mm_fire": {"lob4": 1.0},
    "cat_nat": {"lob4": 1.0},
}
cat = redistribute({n: alloc[n].allocated for n in cat_drivers}, cat_drivers)

# placeholder lapse weights (see module docstring)
lapse_weights = dict(zip(lobs, [2592, 1992, 915, 1225, 1830, 209, 1282, 170, 1922]))
lapse = redistribute({"lapse": alloc["lapse"].allocated}, {"lapse": lapse_weights})

print(f"\n{'LoB':5s}{'premium':>12s}{'reserve':>13s}{'CAT':>12s}{'lapse*':>9s}{'total':>13s}")
cols = [0.0] * 5
for lob in lobs:
    row = [prem[lob], res[lob], cat.get(lob, 0.0), lapse[lob]]
    row.append(sum(row))
    cols = [c + r for c, r in zip(cols, row)]
    print(f"{lob[3:]:5s}" + "".join(f"{v:>{w},.0f}" for v, w in zip(row, (12, 13, 12, 9, 13))))
print("total" + "".join(f"{v:>{w},.0f}" for v, w in zip(cols, (12, 13, 12, 9, 13))))
print("* lapse split uses placeholder weights")
print(f"\nnon-life allocation {alloc['nonlife'].allocated:,.0f} vs LoB total {cols[-1]:,.0f}")
