"""A short plan-act-infer run with timing.

Each step the robot plans over a two-step horizon, executes the first
action and updates its belief twice: once with the standard incremental
smoother and once by reusing the planning factorization.  Half the steps
get a forced association error so both the cheap path and the repair path
are exercised.

Run with ``python demos/plan_act_infer.py`` (about ten seconds).
"""
from dataclasses import replace

from rubinfer.bench.config import load_config
from rubinfer.bench.scenario import consistency_rate, cumulative_time, run_scenario

cfg = replace(load_config("inconsistent"), steps=40, reps=1, name="demo")
res = run_scenario(cfg, methods=["ISAM", "UD_OTM_OO"])

base = cumulative_time(res.records, "ISAM")
rub = cumulative_time(res.records, "UD_OTM_OO")
print(f"{cfg.steps} steps, {len(res.belief.landmarks())} landmarks in the final belief")
print(f"steps whose predicted associations held: {consistency_rate(res.records):.0%}")
print(f"incremental baseline: {base / 1e6:8.1f} ms")
print(f"planning reuse:       {rub / 1e6:8.1f} ms   ({rub / base:.3f} of baseline)")
print("largest difference from the baseline:",
      ", ".join(f"{k} {v:.1e}" for k, v in res.max_diff.items()))

# %% where the time goes, per step
print("\nstep  forced          baseline[ms]  reuse[ms]  removed  added")
rows = {(r.step, r.method, r.phase): r for r in res.records}
for step, truth in enumerate(res.truth, start=1):
    b = rows[step, "ISAM", "total"]
    r = rows[step, "UD_OTM_OO", "total"]
    print(f"{step:4d}  {truth.forced or '-':14s}  {b.time_ns / 1e6:12.2f}  {r.time_ns / 1e6:9.2f}"
          f"  {r.da_rmv:7d}  {r.da_add:5d}")
