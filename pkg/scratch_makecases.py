"""Generate the bundled case-study scenario JSONs (development helper)."""
import json
import os

OUT = "src/gridform/data/cases"
os.makedirs(OUT, exist_ok=True)

GRID = {"id": "grid1", "type": "thevenin", "bus": "B3", "scr": 2.0,
        "x_r": 10.0, "h_eq": 2.0, "d_eq": 100.0, "v_set": 1.0, "s_n": 10.0}

CASE1_COMMON = {
    "base": {"s_base_mva": 100.0, "v_base_kv": 20.0, "f_base_hz": 50.0},
    "duration": 6.0,
    "dt": 1e-4,
    "output_dt": 1e-3,
    "monitored_bus": "B2",
    "init": {"mode": "equilibrate", "settle": 0.5},
    "buses": [{"id": "B1"}, {"id": "B2"}, {"id": "B3"}],
    "lines": [
        {"id": "L12", "from": "B1", "to": "B2", "r": 0.004, "x": 0.04},
        {"id": "L23", "from": "B2", "to": "B3", "r": 0.002, "x": 0.02},
    ],
    "events": [
        {"time": 2.0, "action": "set_reference", "device": "grid1",
         "name": "p_event", "value": 1.0, "ramp": 0.5},
        {"time": 3.6, "action": "open_breaker", "id": "L23"},
    ],
    "outputs": {"channels": "all"},
}

WIND_MPPT = {"id": "wind1", "type": "mppt", "bus": "B1", "s_n": 1.0,
             "p_available": 0.8, "q_setpoint": 0.0, "i_n": 1.2,
             "tau_s": 0.002}

GFML = {
    "id": "gfml1", "type": "gfm_load", "bus": "B2", "s_n": 1.0,
    "p_set": 0.6, "q_set": 0.0,
    "droop": {"k_p": 0.04, "tau_p": 0.05, "tau_q": 0.05},
    "filter": {"x_l": 0.15, "r": 0.015, "b_c": 0.05, "tau_s": 0.002},
    "envelope": {"p_min": 0.2, "p_max": 1.0, "i_n": 1.2},
    "i_n": 1.2, "rocof_max": 4.0,
    "dc": {"c_dc": 0.1, "r_h": 1.25, "v_h_min": 0.65, "v_h_max": 1.1},
}

case1a = dict(CASE1_COMMON, id="case1a", devices=[
    dict(WIND_MPPT),
    {"id": "load1", "type": "fixed_pq", "bus": "B2", "p": 0.6, "q": 0.0},
    dict(GRID, p_import=0.2),
])

case1b = dict(CASE1_COMMON, id="case1b", devices=[
    dict(WIND_MPPT),
    {"id": "load1", "type": "freq_support", "bus": "B2", "p_nominal": 0.6,
     "k_fl": 17.65, "q": 0.0, "tau_f": 0.05},
    dict(GRID, p_import=0.2),
])

case1c = dict(CASE1_COMMON, id="case1c", devices=[
    {"id": "wind1", "type": "gfm", "bus": "B1", "s_n": 1.0,
     "p_set": 0.6, "q_set": 0.0, "p_available": 0.8,
     "droop": {"k_p": 0.04, "tau_p": 0.05, "tau_q": 0.05},
     "filter": {"x_l": 0.15, "r": 0.015, "b_c": 0.05, "tau_s": 0.002},
     "envelope": {"p_min": 0.0, "p_max": 1.0, "i_n": 1.2},
     "i_n": 1.2, "rocof_max": 4.0},
    {"id": "load1", "type": "fixed_pq", "bus": "B2", "p": 0.5, "q": 0.0},
    dict(GRID, p_import=0.1),
])

case1d = dict(CASE1_COMMON, id="case1d", devices=[
    dict(WIND_MPPT),
    dict(GFML),
    dict(GRID, p_import=0.2),
])

for doc in (case1a, case1b, case1c, case1d):
    with open(f"{OUT}/{doc['id']}.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    print("wrote", doc["id"])

case2 = {
    "id": "case2",
    "base": {"s_base_mva": 100.0, "v_base_kv": 20.0, "f_base_hz": 50.0},
    "duration": 13.0,
    "dt": 1e-4,
    "output_dt": 1e-3,
    "monitored_bus": "B2",
    "init": {"mode": "zero", "settle": 0.0},
    "buses": [{"id": "B1"}, {"id": "B2"}],
    "lines": [{"id": "L12", "from": "B1", "to": "B2", "r": 0.004, "x": 0.04}],
    "devices": [
        {"id": "wind1", "type": "gfm", "bus": "B1", "s_n": 1.0,
         "p_set": 0.5, "q_set": 0.0, "p_available": 0.8,
         "droop": {"tau_p": 0.05, "tau_q": 0.05},
         "filter": {"x_l": 0.15, "r": 0.015, "b_c": 0.05, "tau_s": 0.002},
         "envelope": {"p_min": 0.0, "p_max": 1.0, "i_n": 1.2},
         "i_n": 1.2,
         "blackstart": {"t_ramp_start": 0.5, "t_ramp_end": 5.0,
                        "t_power": 7.0, "p_ramp": 3.0},
         "gfl": {"p_available": 0.75, "q_setpoint": 0.0, "i_n": 1.2,
                 "tau_s": 0.002, "ramp": 1.0}},
        {"id": "gfml1", "type": "gfm_load", "bus": "B2", "s_n": 1.0,
         "p_set": 0.5, "q_set": 0.0,
         "droop": {"tau_p": 0.05, "tau_q": 0.05},
         "filter": {"x_l": 0.15, "r": 0.015, "b_c": 0.05, "tau_s": 0.002},
         "envelope": {"p_min": 0.0, "p_max": 1.0, "i_n": 1.2},
         "i_n": 1.2,
         "dc": {"c_dc": 0.1, "r_h": 1.3333333333333333, "v_h_min": 0.0,
                "v_h_max": 1.1},
         "blackstart": {"t_ramp_start": 0.5, "t_ramp_end": 5.0,
                        "t_power": 7.0, "p_ramp": 3.0}},
    ],
    "events": [
        {"time": 11.0, "action": "switch_mode", "device": "wind1",
         "mode": "mppt"},
    ],
    "outputs": {"channels": "all"},
}
with open(f"{OUT}/case2.json", "w") as fh:
    json.dump(case2, fh, indent=2)
print("wrote case2")

# ---- 13-bus network for the large-scale cases -------------------------------
def ring13():
    buses = [{"id": f"B{k}"} for k in range(1, 14)]
    buses += [{"id": "B1G"}, {"id": "B10L"}]
    xs = {
        ("B1", "B2"): 0.030, ("B2", "B3"): 0.025, ("B3", "B4"): 0.030,
        ("B4", "B5"): 0.035, ("B5", "B6"): 0.030, ("B6", "B7"): 0.025,
        ("B7", "B8"): 0.030, ("B8", "B9"): 0.025, ("B9", "B10"): 0.030,
        ("B10", "B11"): 0.035, ("B11", "B12"): 0.030, ("B12", "B13"): 0.025,
        ("B13", "B1"): 0.030, ("B2", "B8"): 0.040, ("B2", "B13"): 0.035,
        ("B5", "B10"): 0.050,
    }
    lines = [{"id": f"L{a}_{b}", "from": a, "to": b, "r": round(x / 10, 6),
              "x": x} for (a, b), x in xs.items()]
    lines.append({"id": "LG1", "from": "B1G", "to": "B1", "r": 0.001,
                  "x": 0.01})
    lines.append({"id": "LL10", "from": "B10L", "to": "B10", "r": 0.001,
                  "x": 0.01, "breaker": "open"})
    return buses, lines


def gfm_l(dev_id, bus, tau_p=0.03):
    return {
        "id": dev_id, "type": "gfm_load", "bus": bus, "s_n": 3.0,
        "p_set": 0.8333333333333334, "q_set": 0.0,
        "droop": {"tau_p": tau_p, "tau_q": 0.05},
        "filter": {"x_l": 0.15, "r": 0.015, "b_c": 0.05, "tau_s": 0.002},
        "envelope": {"p_min": 0.05, "p_max": 1.05, "i_n": 1.0},
        "i_n": 1.0, "rocof_max": 4.0,
        "dc": {"c_dc": 0.1, "r_h": 1.0, "v_h_min": 0.2, "v_h_max": 1.1},
    }


def mppt(dev_id, bus, p_avail, q=0.1):
    return {"id": dev_id, "type": "mppt", "bus": bus, "s_n": p_avail / 0.8,
            "p_available": 0.8, "q_setpoint": q, "i_n": 1.1, "tau_s": 0.002}


BUSES13, LINES13 = ring13()

FIXED3 = [
    {"id": "load4", "type": "fixed_pq", "bus": "B4", "p": 2.6, "q": 0.5},
    {"id": "load6", "type": "fixed_pq", "bus": "B6", "p": 2.8, "q": 0.6},
    {"id": "load11", "type": "fixed_pq", "bus": "B11", "p": 2.7, "q": 0.5},
    {"id": "load12", "type": "fixed_pq", "bus": "B12", "p": 2.6, "q": 0.5},
]

GFMS3 = [gfm_l("gfm3", "B3"), gfm_l("gfm8", "B8"),
         gfm_l("gfm10", "B10"), gfm_l("gfm13", "B13")]

GENS3 = [
    mppt("gen1", "B1G", 3.0), mppt("gen2", "B2", 2.0),
    mppt("gen4", "B4", 2.0), mppt("gen5", "B5", 4.0),
    mppt("gen7", "B7", 2.0), mppt("gen9", "B9", 3.0),
    mppt("gen11", "B11", 2.0), mppt("gen13", "B13", 3.0),
]

COMMON3 = {
    "base": {"s_base_mva": 100.0, "v_base_kv": 20.0, "f_base_hz": 50.0},
    "dt": 1e-4,
    "output_dt": 1e-3,
    "monitored_bus": "B6",
    "init": {"mode": "equilibrate", "settle": 0.6},
    "buses": BUSES13,
    "lines": LINES13,
    "outputs": {"channels": "all"},
}

case3e = dict(COMMON3, id="case3e", duration=4.5,
              devices=GENS3 + GFMS3 + FIXED3 + [
                  {"id": "load10", "type": "fixed_pq", "bus": "B10L",
                   "p": 1.92, "q": 1.12}],
              events=[
                  {"time": 2.0, "action": "open_breaker", "id": "LG1"},
                  {"time": 2.3, "action": "close_breaker", "id": "LL10"},
              ])

case3f = dict(COMMON3, id="case3f", duration=3.6,
              devices=GENS3 + GFMS3 + FIXED3,
              events=[
                  {"time": 2.0, "action": "apply_fault", "bus": "B2",
                   "r": 0.002, "x": 0.008},
                  {"time": 2.1, "action": "clear_fault", "bus": "B2"},
              ])

def sync(dev_id, bus, s_n):
    return {"id": dev_id, "type": "sync_gen", "bus": bus, "s_n": s_n,
            "h": 5.0, "d": 1.0, "x_d_transient": 0.3, "r_a": 0.005,
            "r_gov": 0.05, "t_gov": 0.5, "gov_deadband": 0.012,
            "k_avr": 20.0, "v_ref": 1.0, "p_set": 0.9}

GENS4 = [
    mppt("gen1", "B1G", 3.0), mppt("gen2", "B2", 1.75),
    mppt("gen4", "B4", 1.75), mppt("gen7", "B7", 1.75),
    mppt("gen11", "B11", 1.75),
    sync("gen5", "B5", 4.0), sync("gen9", "B9", 3.5),
    sync("gen13", "B13", 3.5),
]

FIXED4 = [
    {"id": "load4", "type": "fixed_pq", "bus": "B4", "p": 2.4, "q": 0.5},
    {"id": "load6", "type": "fixed_pq", "bus": "B6", "p": 2.5, "q": 0.6},
    {"id": "load11", "type": "fixed_pq", "bus": "B11", "p": 2.4, "q": 0.5},
    {"id": "load12", "type": "fixed_pq", "bus": "B12", "p": 2.4, "q": 0.5},
]

case4 = dict(COMMON3, id="case4", duration=9.0,
             devices=GENS4 + [gfm_l(g, b, tau_p=0.015) for g, b in
                              (("gfm3", "B3"), ("gfm8", "B8"),
                               ("gfm10", "B10"), ("gfm13", "B13"))] +
             FIXED4 + [
                 {"id": "load10", "type": "fixed_pq", "bus": "B10L",
                  "p": 1.92, "q": 1.12}],
             events=[
                 {"time": 2.0, "action": "open_breaker", "id": "LG1"},
                 {"time": 6.0, "action": "close_breaker", "id": "LL10"},
             ])

for doc in (case3e, case3f, case4):
    with open(f"{OUT}/{doc['id']}.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    print("wrote", doc["id"])
