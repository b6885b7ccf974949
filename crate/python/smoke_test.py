"""Smoke test for the walkcoach extension module.

Build and install first:
    pip install maturin
    maturin develop -m crates/py/Cargo.toml
then run from the repository root:
    python python/smoke_test.py
"""

import json
import math
from pathlib import Path

import walkcoach

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"


def load_profile():
    return json.loads((DATA / "profile_medium.json").read_text())


def check_simulate_and_replay():
    profile = load_profile()
    scenario = ROOT / "scenarios" / "constant_pace.json"
    a = walkcoach.simulate(str(scenario), profile, "info-motive", seed=7)
    b = walkcoach.simulate(str(scenario), profile, "info-motive", seed=7)
    assert a == b, "same seed must give the same log"
    events = [json.loads(line) for line in a.splitlines()]
    kinds = {e["kind"] for e in events}
    assert {"Tick", "PromptDelivered", "PhaseChange"} <= kinds, kinds

    stats = walkcoach.replay(a, profile, "info-motive")
    assert stats["goal_attained"] is True
    assert stats["milestones_hit"] == [0.5, 0.75, 1.0]

    truncated = "\n".join(a.splitlines()[:50]) + "\n"
    try:
        walkcoach.replay(truncated, profile, "info-motive")
    except walkcoach.WalkcoachError as e:
        assert "truncated" in str(e)
    else:
        raise AssertionError("truncated log was accepted")


def check_live_session():
    s = walkcoach.Session(
        load_profile(),
        "info-only",
        (1.29, 103.85),
        seed=3,
        pois=str(DATA / "pois.json"),
        graph=str(DATA / "street_graph.json"),
    )
    assert s.phase == "Planning"
    reply = s.chat(0.0, "take me to Riverside Park")
    assert reply[-1]["payload"].get("shortlist"), reply[-1]
    confirmed = s.confirm_route(1.0)
    route = next(e for e in confirmed if e["kind"] == "RouteConfirmed")["payload"]["route"]
    s.start(2.0)
    try:
        s.tick(-5.0, 1.29, 103.85)
    except walkcoach.WalkcoachError:
        pass
    else:
        raise AssertionError("tick before walk start was accepted")

    poly = route["polyline"]
    pts = [(p["lat"], p["lon"]) for p in poly]
    legs = [walkcoach.haversine_m(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    t = 2.0
    for (p, q), d in zip(zip(pts, pts[1:]), legs):
        steps = max(1, math.ceil(d / 2.8))
        for k in range(1, steps + 1):
            f = k / steps
            s.tick(t, p[0] + (q[0] - p[0]) * f, p[1] + (q[1] - p[1]) * f)
            t += 2.0
    assert s.stats["goal_attained"] is True, s.stats
    summary = s.finish(t)
    assert summary["summary_text"]
    s.close(t)
    assert s.phase == "Closed"
    assert walkcoach.replay(s.log(), load_profile(), "info-only", s.session_id)["goal_attained"]


def check_stats():
    assert abs(walkcoach.standardized_alpha(6, 0.650) - 0.918) < 5e-4
    assert abs(walkcoach.marginal_effect(-0.806, -0.444) - 1.028) < 1e-12
    items = [[1, 2, 3], [2, 2, 3], [3, 4, 4], [4, 5, 5], [5, 5, 6]]
    assert 0.0 < walkcoach.cronbach_alpha(items) <= 1.0

    csv_text = (DATA / "synthetic_responses.csv").read_text()
    report = walkcoach.analyze(csv_text, "positive_feelings")
    names = [c["name"] for c in report["fit"]["coefficients"]]
    assert names == ["Intercept", "Info-Only", "Sequence(BA)", "Treatment×Sequence"], names
    assert len(report["variance_components"]) == 2
    assert "Group Var" in walkcoach.analyze(csv_text, "usage_experience", text=True)
    rel = walkcoach.reliability(csv_text, "positive_feelings")
    assert rel["k"] == 6

    fit = walkcoach.fit_lmm(
        [5.0, 4.1, 5.6, 4.9, 6.0, 5.2, 5.4, 4.4],
        ["a", "a", "b", "b", "c", "c", "d", "d"],
        ["info-motive", "info-only", "info-motive", "info-only", "info-only", "info-motive", "info-only", "info-motive"],
        ["AB", "AB", "AB", "AB", "BA", "BA", "BA", "BA"],
    )
    assert len(fit["coefficients"]) == 4


if __name__ == "__main__":
    check_simulate_and_replay()
    check_live_session()
    check_stats()
    print("smoke test passed")
