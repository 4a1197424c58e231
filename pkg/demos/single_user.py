"""Walk one user of the default scene through the whole chain.

    python demos/single_user.py [user]

Traces the geometric paths, simulates the hybrid training frames with noise,
recovers the sparse channel with MOMP (K_res = 128) and localizes the user
without knowing the clock offset.
"""
import sys
import time

import numpy as np

from momploc.harness import _dictionary, angular_error, config_from_dict, observe_user, prepare_user, scene_for
from momploc.localization import classify, solve_position
from momploc.scene import to_room_frame
from momploc.solver import extract_paths, momp_solve

user = int(sys.argv[1]) if len(sys.argv) > 1 else 42
cfg = config_from_dict({"users": [user], "methods": [{"name": "MOMP", "k_res": [128]}]})
scene = scene_for(cfg)
case = prepare_user(cfg, scene, user)
print(f"user {user} at {scene.users[user]} served by AP {case.ap}; {len(case.paths)} paths")
for p, lab in zip(case.paths, case.labels):
    print(f"  {lab.value:>14s}  |g| = {abs(p.gain):.2e}  delay = {p.delay_s * 1e9:6.2f} ns")

rx = cfg.rx_arrays[0]
y, phi, training = observe_user(cfg, case, rx)
dset = _dictionary(128.0, training.d_taps, cfg.sample_period_s, rx, cfg.tx_array, cfg.pulse)
t = time.perf_counter()
est = momp_solve(y, phi, dset, cfg.solver)
print(f"MOMP over {dset.n_total:.3g} atoms: {len(est.support)} paths in {time.perf_counter() - t:.2f} s")

rec = extract_paths(est, dset)
main_true = max(case.paths, key=lambda p: abs(p.gain))
main_est = max(rec, key=lambda p: abs(p.gain))
print(f"main path AoA error {angular_error(main_est.aoa, main_true.aoa):.2f} deg, "
      f"AoD error {angular_error(main_est.aod, main_true.aod):.2f} deg")

room = to_room_frame(rec, case.ap_rotation, case.user_rotation)
fix = solve_position(room, [classify(p, cfg.classifier) for p in room])
print(f"estimated position {np.round(fix.u, 3)} vs true {np.round(case.position, 3)} (relative to the AP)")
print(f"localization error {np.linalg.norm(fix.u - case.position):.3f} m, "
      f"labels {[lab.value for lab in fix.labels]}")
