"""Smoke test for the nuc_py extension: simulate, restore, score."""

import math

import nuc_py


def main():
    data = nuc_py.simulate(fovs=2, k=4, size=40, seed=3)
    assert len(data["observations"]) == 2
    assert all(len(g) == 4 for g in data["observations"])
    assert len(data["gain"]) == 40 and len(data["gain"][0]) == 40

    out = nuc_py.restore(
        data["observations"],
        calib_gain=data["calib_gain"],
        calib_offset=data["calib_offset"],
        cycles=3,
        joint_iters=100,
    )
    history = out["objective_history"]
    assert all(math.isfinite(v) for v in history)
    assert history[-1] <= history[0]

    scores = [
        nuc_py.aligned_compare(t, e)
        for t, e in zip(data["pivots"], out["scenes"])
    ]
    mean_pc = sum(s["pearson"] for s in scores) / len(scores)
    mean_rmse = sum(s["aligned_rmse"] for s in scores) / len(scores)
    assert mean_pc > 0.999, mean_pc
    print(
        f"smoke ok: {out['cycles']} cycles, mean Pearson {mean_pc:.7f}, "
        f"aligned RMSE {mean_rmse:.3f} gv ({nuc_py.gv_to_celsius(mean_rmse):.4f} C)"
    )

    try:
        nuc_py.simulate(profile="square")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown profile must raise ValueError")


if __name__ == "__main__":
    main()
