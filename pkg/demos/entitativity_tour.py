"""How group motion parameters map to perceived emotion, and back.

Walks the invisibility dial from 1 (robots read as unrelated individuals) to 0
(robots read as one marching unit) and prints the parameters the team would use.

    python3 demos/entitativity_tour.py
"""
from dataclasses import astuple

from entinav.core import GP_FIELDS, GroupParams
from entinav.edm import (E_FIELDS, EntitativityMapping, entitativity, invisibility, params_for_entitativity,
                         target_entitativity)

mapping = EntitativityMapping.reference()

print("features:", ", ".join(E_FIELDS))
for name, gp in (("defaults", GroupParams()), ("minima", GroupParams.minima()), ("maxima", GroupParams.maxima())):
    e = entitativity(mapping, gp)
    print(f"{name:>8}: E = ({', '.join(f'{x:+.3f}' for x in e)})  s = {invisibility(mapping, e):.3f}")

print()
print("   s  " + "  ".join(f"{f:>14}" for f in GP_FIELDS))
for k in range(11):
    s = 1 - k / 10
    gp = params_for_entitativity(mapping, target_entitativity(mapping, s))
    print(f"{s:4.1f}  " + "  ".join(f"{v:14.3f}" for v in astuple(gp)))
