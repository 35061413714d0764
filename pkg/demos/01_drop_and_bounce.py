"""
Dropping a cube onto the ground
===============================

A 10 cm cube starts flat, 1 m above the plane, and falls. With restitution
e the rebound apex should be close to e^2 times the drop height.
"""

import numpy as np

from bouncenet.physics import MaterialParams, RigidBodyState, SimConfig, energies, simulate_states

cfg = SimConfig()
a = 0.1  # half edge, metres

# one frame every 1/24 s, ten physics substeps per frame
for e in (0.1, 0.5, 0.9):
    mat = MaterialParams(mass=1.0, restitution=e, friction_coeff=0.5, half_extent=a)
    start = RigidBodyState.at_rest((0.0, 0.0, 1.0 + a))
    states = simulate_states(start, mat, cfg)
    z = states[:, 2] - a  # height of the bottom face
    vz = states[:, 9]
    # the impact falls between two frames: the first one that is already moving up
    bounce = int(np.argmax(vz > 0))
    apex = z[bounce:].max()
    print(f"e={e}: {len(states)} frames, bounce seen at frame {bounce} "
          f"({bounce / cfg.frame_rate:.3f} s), rebound apex {apex:.3f} m (e^2 = {e * e:.3f})")

# the energy never grows from one frame to the next
E = energies(states, mat, cfg.gravity)
print("largest frame-to-frame energy gain:", np.diff(E).max(), "J")
