"""Smoke test of the Python bindings.

Build and install first:
    pip install maturin
    pip install --no-build-isolation -e crates/python
then run `python python/smoke_test.py`.
"""

import math
import random

import dynembed


def synthetic_events(n=1500, users=30, items=25, seed=7):
    rng = random.Random(seed)
    favourites = {u: rng.sample(range(items), 3) for u in range(users)}
    t = 1_000_000.0
    events = []
    for _ in range(n):
        t += rng.uniform(0.1, 2.0)
        u = rng.randrange(users)
        i = rng.choice(favourites[u]) if rng.random() < 0.7 else rng.randrange(items)
        events.append((f"u{u}", f"i{i}", t))
    return events


def main():
    # truncated SVD of a rank-1 matrix
    u, s, v = dynembed.truncated_svd([[1.0, 2.0], [2.0, 4.0]], 1)
    assert abs(s[0] - 5.0) < 1e-9, s
    assert abs(abs(u[0][0]) - 1 / math.sqrt(5)) < 1e-9

    events = synthetic_events()
    ds = dynembed.Dataset.from_events(events)
    assert len(ds) == len(events)
    print(f"dataset: {len(ds)} events, {ds.user_count} users, {ds.item_count} items")

    keys = [k for k, _, _ in dynembed.Config.keys()]
    assert "beta" in keys and "restart_policy" in keys

    cfg = dynembed.Config(task="next-interaction", k1=8, beta=2, restart_policy="monitor",
                          restart_threshold=3, a=2, b=2, **{"lambda": 0.5})
    report = dynembed.run_task(cfg, ds)
    assert 0.0 <= report["metrics"]["mrr"] <= 1.0
    again = dynembed.run_task(cfg, ds)
    assert again["metrics"] == report["metrics"]
    print("next-interaction:", {k: round(v, 4) for k, v in report["metrics"].items()},
          "restarts", report["restart_count"])

    fi = dynembed.Config(task="future-item", k1=4, alpha=0.5, beta=2)
    print("future-item:", {k: round(v, 4) for k, v in dynembed.run_task(fi, ds)["metrics"].items()})

    try:
        dynembed.Config(no_such_key=1)
    except KeyError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    split = int(0.8 * len(events))
    model = dynembed.Model(cfg, dynembed.Dataset.from_events(events[:split]))
    for user, item, t in events[split:split + 200]:
        model.process(user, item, t)
    user = events[split][0]
    top = model.recommend(user, k=5)
    assert len(top) == 5 and len(set(top)) == 5
    assert len(model.user_embedding(user)) == len(model.item_embedding(top[0]))
    print(f"model: stage {model.stage}, distance {model.monitor_distance:.4f}, "
          f"true error {model.true_error():.4f}, top-5 for {user}: {top}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
