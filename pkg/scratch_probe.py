import json
import math
import numpy as np
from gridform.scenario import parse_scenario
from gridform.engine import Engine

doc = json.load(open("scratch_case.json")) if False else None
from scratch_smoke import doc  # reuse the scenario dict

spec = parse_scenario(json.dumps(doc))
eng = Engine(spec)
y = eng.equilibrate()
dt = spec.dt
# settle
t = -0.5
while t < -1e-12:
    y = eng._rk4(t, y, dt)
    t += dt

gfml = eng.by_id["gfml1"]
grid = eng.by_id["grid1"]
ev_i = 0
i = 0
n_steps = int(round(4.2 / dt))
while i <= n_steps:
    t = i * dt
    while ev_i < len(eng.events) and eng.events[ev_i].time <= t + 1e-9:
        d, y = eng._apply_event(eng.events[ev_i], t, y)
        if d:
            eng._classify()
            eng._v_warm = np.zeros(eng.net.n, dtype=complex)
        ev_i += 1
    if i % 500 == 0:
        yl = y.tolist()
        alg = eng._algebra(t, yl)
        k = gfml.i0
        v = alg.v_full[gfml.bus_idx]
        delta = yl[k]
        vz = v * complex(math.cos(delta), -math.sin(delta))
        print(f"t={t:5.2f} wg={yl[grid.i0+1]:.5f} wL={yl[k+5]:.5f} "
              f"xp={yl[k+3]:+.3f} xenv={yl[k+10]:+.5f} "
              f"|i|={math.hypot(yl[k+1], yl[k+2]):.3f} "
              f"vq={vz.real:.3f} vd={-vz.imag:+.3f} "
              f"xivq={yl[k+6]:+.4f} xivd={yl[k+7]:+.4f} vt={yl[k+13]:.3f}")
    y = eng._rk4(t, y, dt)
    i += 1
