import json, time
import numpy as np
from gridform.scenario import parse_scenario
from gridform.engine import Engine

doc = {
    "id": "case1d_dev",
    "duration": 8.0,
    "dt": 1e-4,
    "output_dt": 1e-3,
    "monitored_bus": "B2",
    "init": {"mode": "equilibrate", "settle": 0.5},
    "buses": [{"id": "B1"}, {"id": "B2"}, {"id": "B3"}],
    "lines": [
        {"id": "L12", "from": "B1", "to": "B2", "r": 0.004, "x": 0.04},
        {"id": "L23", "from": "B2", "to": "B3", "r": 0.002, "x": 0.02},
    ],
    "devices": [
        {"id": "wind1", "type": "mppt", "bus": "B1", "s_n": 1.0,
         "p_available": 0.8, "i_n": 1.2},
        {"id": "gfml1", "type": "gfm_load", "bus": "B2", "s_n": 1.0,
         "p_set": 0.6, "droop": {"k_p": 0.04, "tau_p": 0.05, "tau_q": 0.05},
         "envelope": {"p_min": 0.2, "p_max": 1.0, "i_n": 1.2},
         "i_n": 1.2,
         "dc": {"r_h": 1.25, "v_h_min": 0.65, "v_h_max": 1.1}},
        {"id": "grid1", "type": "thevenin", "bus": "B3", "scr": 2.0,
         "h_eq": 2.0, "d_eq": 100.0, "p_import": 0.2},
    ],
    "events": [
        {"time": 2.0, "action": "set_reference", "device": "grid1",
         "name": "p_event", "value": 1.0, "ramp": 0.5},
        {"time": 3.6, "action": "open_breaker", "id": "L23"},
    ],
}

spec = parse_scenario(json.dumps(doc))
eng = Engine(spec)
t0 = time.time()
series, verdict = eng.run()
wall = time.time() - t0
print(f"verdict: {verdict}, wall {wall:.1f}s, samples {series.n_samples}")
t = series.time
for name in ["f_sys", "P_wind1", "P_gfml1", "P_grid1", "V_B2",
             "Vdc_link_gfml1", "Vdc_load_gfml1", "f_gfml1", "Irms_gfml1"]:
    c = series[name]
    def at(tx):
        return c[min(int(tx / series.dt), len(c) - 1)]
    print(f"{name:16s} t=0: {at(0):8.4f}  t=1.9: {at(1.9):8.4f}  "
          f"t=3.5: {at(3.5):8.4f}  t=5.5: {at(5.5):8.4f}  t=7.9: {at(7.9):8.4f}  "
          f"min {c.min():8.4f} max {c.max():8.4f}")
