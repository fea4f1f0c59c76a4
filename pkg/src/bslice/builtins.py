"""Packaged example scenarios."""
from __future__ import annotations

from .scenario import Scenario, ScenarioError, loads

TORUS_EXAMPLE = """\
# Rotation monodromy of order 4 on the 2-torus, circle acting by t -> t + 4s.
[chart leaf]
phi = angle(1)
psi = angle(1)

[torus Z]
leaf = leaf
beta = dphi ^ dpsi
monodromy = matrix(phi, psi: 0, -1; 1, 0)
period = 1
order = 4
time = t
defining = s
compact = true

[form omega]
on = Z
term = 1/sin(s) * dt ^ ds
term = dphi ^ dpsi

[action rho]
torus = Z
circle.t = t + 4*s
base_degree = 4

[anchor regular]
phi = 0.2
psi = 0.1

[anchor exceptional]
phi = 0
psi = 0

[anchor half]
phi = 0.5
psi = 0

[task]
form = omega
action = rho
seed = 0
"""

CURLED_TORUS = """\
# Hyperbolic block (x, y) with the b-function log(p); Z/2 flips (x, y) and
# shifts the cover time by 1/2, so the base is a mapping torus with
# monodromy -Id and modular period 1/2.
[chart leaf]
x = real
y = real

[torus Z]
leaf = leaf
beta = dx ^ dy
monodromy = matrix(x, y: -1, 0; 0, -1)
period = 1/2
order = 2
time = t
defining = p
compact = false
simply_connected = true

[form omega]
on = Z
term = (1/2) * dt ^ dlog(p)
term = dx ^ dy

[action rho]
torus = Z
circle.t = t + 2*s
base_degree = 2

[functions F]
f = log(p)
f = x*y

[anchor origin]
x = 0
y = 0

[anchor regular]
x = 0.3
y = -0.2

[task]
form = omega
action = rho
seed = 0
"""

S2XS2 = """\
# S^2 x S^2 in Archimedes coordinates (theta, h); swap monodromy, circle
# t -> t + 2s and SO(3) rotating both factors.
[chart leaf]
th1 = angle(1)
h1 = real(-1, 1)
th2 = angle(1)
h2 = real(-1, 1)

[torus Z]
leaf = leaf
beta = 2*pi * dth1 ^ dh1
beta = 2*pi * dth2 ^ dh2
monodromy.th1 = th2
monodromy.h1 = h2
monodromy.th2 = th1
monodromy.h2 = h1
period = 1
order = 2
time = t
defining = a
compact = true
simply_connected = true

[form omega]
on = Z
term = dt ^ dlog(a)
term = 2*pi * dth1 ^ dh1
term = 2*pi * dth2 ^ dh2

[action G]
torus = Z
circle.t = t + 2*s
base_degree = 2
factor = so3_diag(th1, h1; th2, h2)

[anchor generic]
th1 = 0.1
h1 = 0.3
th2 = 0.6
h2 = -0.2

[anchor diagonal]
th1 = 0.1
h1 = 0.3
th2 = 0.1
h2 = 0.3

[anchor antipodal]
th1 = 0.1
h1 = 0.3
th2 = 0.6
h2 = -0.3

[task]
form = omega
action = G
seed = 0
"""

TSTAR_G = """\
# T*G for G = S^1 x T^1: a = lambda(v1) along the central direction,
# (q, p) the remaining base angle and momentum.
[chart leaf]
q = angle(1)
p = real

[torus Z]
leaf = leaf
beta = dq ^ dp
period = 1
order = 1
time = t
defining = a
compact = false

[form omega]
on = Z
term = dt ^ dlog(a)
term = dq ^ dp

[action G]
torus = Z
circle.t = t + s
base_degree = 1
factor = torus(q)

[anchor base]
q = 0
p = 0

[task]
form = omega
action = G
seed = 0
"""

BUILTINS = {
    "torus_example": TORUS_EXAMPLE,
    "curled_torus": CURLED_TORUS,
    "s2xs2": S2XS2,
    "tstar_g": TSTAR_G,
}


def names() -> list[str]:
    return sorted(BUILTINS)


def text(name: str) -> str:
    if name not in BUILTINS:
        raise ScenarioError(f"unknown builtin {name!r}; choose from {', '.join(names())}")
    return BUILTINS[name]


def builtin(name: str) -> Scenario:
    return loads(text(name), source=f"builtin:{name}")
