"""Smoke test for the progip_py extension module.

Build and run from the repository root:

    cargo build --release -p progip-py --features extension-module
    cp target/release/libprogip_py.so python/progip_py.so
    python3 python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import progip_py as pp


def tiny_close(a, b, tol=1e-6):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    skel = pp.Skeleton()
    assert len(skel.names) == pp.NUM_JOINTS == 24
    rest = [[0.0, 0.0, 0.0]] * 24
    positions = skel.forward_kinematics(rest)
    assert positions[0] == [0.0, 0.0, 0.0]

    motion = pp.Motion.scripted("walk", 1.5, seed=3)
    assert motion.n_frames == 90 and motion.label == "walk"
    motion.synthesize_imu()
    feats = motion.features()
    assert len(feats) == 90 and len(feats[0]) == pp.INPUT_DIM

    assert pp.mjre(motion.poses(), motion.poses()) == 0.0
    assert pp.mjpe(motion.poses(), motion.poses()) == 0.0

    model = pp.Model("desk", seed=10)
    assert model.window == 40 and model.supervise_frame == 30
    preds = model.predict(feats)
    assert len(preds) == 90 - 39 and preds[0][0] == 29

    stream = pp.Stream(model)
    emitted = []
    with tempfile.TemporaryDirectory() as tmp:
        motion.save(tmp + "/walk")
        loaded = pp.Motion.load(tmp + "/walk")
        assert loaded.has_imu and loaded.n_frames == 90
    # identity-orientation frames: the stream emits once 40 frames are buffered
    still = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    for i in range(45):
        out = stream.push(i / 60.0, [still, still, still])
        if out is not None:
            emitted.append(out)
    assert len(emitted) == 6 and emitted[0][0] == 29
    assert math.isclose(emitted[0][1], 29 / 60.0)

    before = model.evaluate(motion)
    losses = model.train([motion], max_steps=5, batch=8)
    assert len(losses) == 5 and all(math.isfinite(l) for l in losses)
    after = model.evaluate(motion)
    assert set(after) == {"mjre_deg", "mjre_pelvis_deg", "mjpe_cm", "mjpe_wrist_cm"}

    with tempfile.TemporaryDirectory() as tmp:
        model.save(tmp)
        again = pp.Model.load(tmp)
        window = feats[:40]
        assert tiny_close(
            [v for j in again.infer_window(window) for v in j],
            [v for j in model.infer_window(window) for v in j],
        )

    try:
        pp.Model("huge")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print(f"progip_py smoke test ok: MJPE {before['mjpe_cm']:.1f} -> {after['mjpe_cm']:.1f} cm after 5 steps")


if __name__ == "__main__":
    main()
