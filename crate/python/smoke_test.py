#!/usr/bin/env python3
"""Smoke test for the planarwalk_py extension module.

Build the extension first:

    cargo build --release -p planarwalk-py

then run this script from the repository root:

    python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def import_module():
    """Copy the cdylib next to a temp dir under the importable name."""
    candidates = [
        ROOT / "target" / "release" / "libplanarwalk_py.so",
        ROOT / "target" / "debug" / "libplanarwalk_py.so",
        ROOT / "target" / "release" / "libplanarwalk_py.dylib",
        ROOT / "target" / "debug" / "libplanarwalk_py.dylib",
    ]
    src = next((p for p in candidates if p.exists()), None)
    if src is None:
        sys.exit("extension not built; run: cargo build --release -p planarwalk-py")
    tmp = pathlib.Path(tempfile.mkdtemp(prefix="planarwalk_py_"))
    shutil.copy(src, tmp / "planarwalk_py.so")
    sys.path.insert(0, str(tmp))
    import planarwalk_py

    return planarwalk_py


def main():
    pw = import_module()

    # --- reduced model: closed-form flow conserves orbital energy
    m, h = 32.0, 0.64
    e0 = pw.orbital_energy_py(0.05, 3.0, m, h)
    p, l = 0.05, 3.0
    for t in (0.05, 0.1, 0.2, 0.35):
        pt, lt = pw.alip_flow_py(p, l, t, m, h)
        et = pw.orbital_energy_py(pt, lt, m, h)
        assert abs(et - e0) < 1e-9 * max(1.0, abs(e0)), (t, e0, et)
    print("alip flow: orbital energy conserved")

    # dead-beat placement is finite and bounded
    psw = pw.alip_planner_step_py(0.05, 3.0, 0.0, 0.5, m, h)
    assert math.isfinite(psw) and abs(psw) <= 0.6
    print(f"alip planner: p_sw = {psw:+.3f} m")

    # --- full environment: baseline walking for 3 simulated seconds
    env = pw.WalkEnv(robot="rabbit", controller="fl", gains="nominal", v=0.3, seed=0)
    assert env.observation_dim == 5 and env.action_dim == 3
    obs = env.reset()
    total = 0.0
    for k in range(100):
        obs, reward, terminated, truncated = env.step(env.baseline_action())
        assert all(math.isfinite(x) for x in obs)
        assert math.isfinite(reward)
        total += reward
        if terminated:
            sys.exit(f"baseline fell at step {k}: {env.last_error}")
        if truncated:
            break
    print(f"env rollout: 100 steps, return {total:.1f}, v_bar {env.average_velocity():+.3f} m/s")
    assert abs(env.average_velocity() - 0.3) < 0.1

    # determinism across instances
    a = pw.WalkEnv(robot="rabbit", seed=7)
    b = pw.WalkEnv(robot="rabbit", seed=7)
    ra = a.step([0.1, 0.0, 0.0])
    rb = b.step([0.1, 0.0, 0.0])
    assert ra == rb
    print("env determinism: identical step results for identical seeds")

    # --- trained policy, if a checkpoint is present
    ckpt = ROOT / "artifacts" / "checkpoint.ckpt"
    if ckpt.exists():
        agent = pw.Agent.load(str(ckpt))
        env = pw.WalkEnv(robot="rabbit", v=0.5, seed=1)
        obs = env.reset()
        for k in range(150):
            obs, reward, terminated, truncated = env.step(agent.act(obs))
            if terminated:
                sys.exit(f"policy fell at step {k}")
            if truncated:
                break
        print(
            f"policy rollout: iteration {agent.iteration}, "
            f"v_bar {env.average_velocity():+.3f} m/s at command +0.500"
        )
    else:
        print("policy rollout: skipped (no artifacts/checkpoint.ckpt)")

    print("smoke test passed")


if __name__ == "__main__":
    main()
