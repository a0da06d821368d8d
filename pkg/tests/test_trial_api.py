"""Trial conduct over HTTP: creation, outcome submission, posterior and
recommendation reads, durable replay, and concurrent submission safety."""

import json
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from dosebo.design import OutcomeMatchError
from dosebo.server import create_app


def config_payload(**overrides):
    cfg = dict(mode="personalized", j_dims=2, p_covs=1, r=1, c0=3, n_max=10,
               grid_step=0.25, seed=7)
    cfg.update(overrides)
    return cfg


def bowl(dose, stratum_key):
    # noiseless objective, minimized at (0.5, 0.75); stratum 1 sits higher
    d0, d1 = dose
    return (d0 - 0.5) ** 2 + (d1 - 0.75) ** 2 + 0.5 * (stratum_key == "1")


def fill_items(pending):
    items = []
    for slot in pending:
        for _ in range(slot["needed"] - slot["received"]):
            items.append({"dose": slot["dose"], "stratum": slot["stratum"],
                          "y": bowl(slot["dose"], slot["stratum"])})
    return items


def drive(client, trial_id, rounds=None, prefix="drive"):
    """Submit full cohorts until the trial finishes or ``rounds`` runs out."""
    k = 0
    while rounds is None or k < rounds:
        trial = client.get(f"/trials/{trial_id}").json()
        if trial["status"] != "enrolling":
            break
        r = client.post(f"/trials/{trial_id}/outcomes", json={
            "cohort_id": f"{prefix}-{k}", "items": fill_items(trial["pending"])})
        assert r.status_code == 200, r.text
        k += 1
    return client.get(f"/trials/{trial_id}").json()


@pytest.fixture()
def client(tmp_path):
    with TestClient(create_app(data_dir=tmp_path / "trials")) as c:
        c.data_dir = tmp_path / "trials"
        yield c


def create_trial(client, trial_id="t1", **overrides):
    r = client.post("/trials", json={"trial_id": trial_id,
                                     "config": config_payload(**overrides)})
    assert r.status_code == 201, r.text
    return r.json()


class TestCreate:
    def test_create_returns_pending_initial_design(self, client):
        body = create_trial(client)
        assert body["trial_id"] == "t1"
        assert body["status"] == "enrolling"
        assert body["schema_version"] == "1"
        assert body["config"]["mode"] == "personalized"
        assert body["config"]["n_max"] == 10
        # one slot per (initial dose, stratum): c0 = 3 doses x 2 strata
        pending = body["pending"]
        assert len(pending) == 6
        assert {s["stratum"] for s in pending} == {"0", "1"}
        assert all(s["needed"] == 1 and s["received"] == 0 for s in pending)
        # both strata get the same initial dose set
        doses = {st: sorted(tuple(s["dose"]) for s in pending if s["stratum"] == st)
                 for st in ("0", "1")}
        assert doses["0"] == doses["1"]

    def test_generated_id_when_omitted(self, client):
        r = client.post("/trials", json={"config": config_payload()})
        assert r.status_code == 201
        tid = r.json()["trial_id"]
        assert len(tid) == 12
        assert client.get(f"/trials/{tid}").status_code == 200

    def test_duplicate_id_conflicts(self, client):
        create_trial(client)
        r = client.post("/trials", json={"trial_id": "t1", "config": config_payload()})
        assert r.status_code == 409
        assert "already exists" in r.json()["detail"]

    def test_invalid_id_rejected(self, client):
        r = client.post("/trials", json={"trial_id": "no spaces!", "config": config_payload()})
        assert r.status_code == 400

    def test_invalid_config_rejected(self, client):
        r = client.post("/trials", json={"config": config_payload(mode="adaptive")})
        assert r.status_code == 400
        r = client.post("/trials", json={"config": config_payload(bogus=1)})
        assert r.status_code == 400
        assert "unknown config fields" in r.json()["detail"]
        r = client.post("/trials", json={"items": []})
        assert r.status_code == 400
        assert "config" in r.json()["detail"]

    def test_unknown_trial_404(self, client):
        assert client.get("/trials/nope").status_code == 404
        r = client.post("/trials/nope/outcomes",
                        json={"cohort_id": "c0", "items": [{"dose": [0, 0], "y": 1.0}]})
        assert r.status_code == 404


class TestOutcomes:
    def test_partial_cohort_accumulates(self, client):
        create_trial(client)
        pending = client.get("/trials/t1").json()["pending"]
        first = fill_items(pending)[:1]
        r = client.post("/trials/t1/outcomes", json={"cohort_id": "c0", "items": first})
        assert r.status_code == 200
        body = r.json()
        assert body["duplicate"] is False
        assert body["accepted"] == 1
        assert body["cohort_complete"] is False
        assert body["records"] == []
        assert body["status"] == "enrolling"
        # n counts analyzed outcomes; staged ones only show in the slots
        assert body["n"] == 0
        got = [s for s in body["pending"] if s["received"] == 1]
        assert len(got) == 1

    def test_completed_cohort_reports_iteration_records(self, client):
        create_trial(client)
        pending = client.get("/trials/t1").json()["pending"]
        r = client.post("/trials/t1/outcomes",
                        json={"cohort_id": "c0", "items": fill_items(pending)})
        body = r.json()
        assert body["cohort_complete"] is True
        assert body["n"] == 6
        recs = body["records"]
        assert [rec["iteration"] for rec in recs] == [0, 0]
        assert sorted(rec["stratum"] for rec in recs) == ["0", "1"]
        for rec in recs:
            assert rec["max_aei"] >= 0
            assert len(rec["d_hat"]) == 2
        # next cohort opens with one slot per stratum at r = 1
        assert len(body["pending"]) == 2
        assert {s["stratum"] for s in body["pending"]} == {"0", "1"}

    def test_duplicate_cohort_id_is_idempotent(self, client):
        create_trial(client)
        pending = client.get("/trials/t1").json()["pending"]
        items = fill_items(pending)
        first = client.post("/trials/t1/outcomes",
                            json={"cohort_id": "c0", "items": items}).json()
        events_before = (client.data_dir / "t1" / "events.jsonl").read_text()
        again = client.post("/trials/t1/outcomes",
                            json={"cohort_id": "c0", "items": items[:2]})
        assert again.status_code == 200
        body = again.json()
        assert body["duplicate"] is True
        assert body["accepted"] == first["accepted"]
        assert client.get("/trials/t1").json()["n"] == 6
        # a duplicate must not touch the log
        assert (client.data_dir / "t1" / "events.jsonl").read_text() == events_before

    def test_unmatched_dose_conflicts_atomically(self, client):
        create_trial(client)
        pending = client.get("/trials/t1").json()["pending"]
        items = fill_items(pending)[:1]
        items.append({"dose": [0.125, 0.125], "stratum": "0", "y": 0.0})
        r = client.post("/trials/t1/outcomes", json={"cohort_id": "c0", "items": items})
        assert r.status_code == 409
        # the valid first item must not have been applied
        after = client.get("/trials/t1").json()
        assert after["n"] == 0
        assert all(s["received"] == 0 for s in after["pending"])

    def test_item_validation(self, client):
        create_trial(client)
        r = client.post("/trials/t1/outcomes", json={"cohort_id": "c0", "items": []})
        assert r.status_code == 400
        assert "items" in r.json()["detail"]
        r = client.post("/trials/t1/outcomes",
                        json={"cohort_id": "c0", "items": [{"dose": [0.5, 0.5]}]})
        assert r.status_code == 400
        assert "missing fields" in r.json()["detail"]
        r = client.post("/trials/t1/outcomes",
                        json={"items": [{"dose": [0.5, 0.5], "stratum": "0", "y": 1.0}]})
        assert r.status_code == 400
        assert "cohort_id" in r.json()["detail"]

    def test_submission_after_finish_conflicts(self, client):
        create_trial(client)
        final = drive(client, "t1")
        assert final["status"] == "budget-complete"
        assert final["n"] == 10
        r = client.post("/trials/t1/outcomes", json={
            "cohort_id": "late", "items": [{"dose": [0.5, 0.5], "stratum": "0", "y": 1.0}]})
        assert r.status_code == 409


class TestPosterior:
    def test_before_first_fit_conflicts(self, client):
        create_trial(client)
        r = client.get("/trials/t1/posterior")
        assert r.status_code == 409
        assert "no fitted model" in r.json()["detail"]

    def test_view_payload(self, client):
        create_trial(client)
        drive(client, "t1", rounds=1)
        r = client.get("/trials/t1/posterior", params={"stratum": "1"})
        assert r.status_code == 200
        view = r.json()
        assert view["stratum"] == "1"
        assert view["trial_id"] == "t1"
        assert len(view["grid"]) == 25
        for key in ("mean", "sigma2", "aei", "dopt_mass"):
            assert len(view[key]) == 25
        assert all(v >= 0 for v in view["sigma2"])
        assert all(v >= 0 for v in view["aei"])
        assert sum(view["dopt_mass"]) == pytest.approx(1.0)
        assert view["d_hat"] in view["grid"]
        assert view["stopped"] is False
        assert view["n_stratum"] == 3

    def test_default_stratum_is_first(self, client):
        create_trial(client)
        drive(client, "t1", rounds=1)
        assert client.get("/trials/t1/posterior").json()["stratum"] == "0"

    def test_unknown_stratum_rejected(self, client):
        create_trial(client)
        drive(client, "t1", rounds=1)
        assert client.get("/trials/t1/posterior", params={"stratum": "x"}).status_code == 400
        assert client.get("/trials/t1/posterior", params={"stratum": "01"}).status_code == 400

    def test_reads_are_stable(self, client):
        create_trial(client)
        drive(client, "t1", rounds=1)
        a = client.get("/trials/t1/posterior", params={"stratum": "0"}).json()
        b = client.get("/trials/t1/posterior", params={"stratum": "0"}).json()
        assert a == b
        # reading must not advance the trial
        assert client.get("/trials/t1").json()["n"] == 6


class TestRecommendation:
    def test_while_enrolling_conflicts(self, client):
        create_trial(client)
        assert client.get("/trials/t1/recommendation").status_code == 409

    def test_final_payload(self, client):
        create_trial(client)
        final = drive(client, "t1")
        assert final["status"] == "budget-complete"
        r = client.get("/trials/t1/recommendation")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "budget-complete"
        assert set(body["strata"]) == {"0", "1"}
        for payload in body["strata"].values():
            assert payload["d_hat"] in payload["grid"]
            assert len(payload["grid"]) == 25
            assert len(payload["dopt_mass"]) == 25
            assert sum(payload["dopt_mass"]) == pytest.approx(1.0)
            assert payload["sigma2"] >= 0
        # repeated reads return the identical recommendation
        assert client.get("/trials/t1/recommendation").json() == body


class TestPersistence:
    def test_event_log_contents(self, client):
        create_trial(client)
        drive(client, "t1", rounds=1)
        lines = [json.loads(line) for line in
                 (client.data_dir / "t1" / "events.jsonl").read_text().splitlines()]
        assert [e["type"] for e in lines] == ["outcomes", "iteration", "iteration"]
        assert lines[0]["cohort_id"] == "drive-0"
        assert len(lines[0]["items"]) == 6
        assert {e["stratum"] for e in lines[1:]} == {"0", "1"}
        assert all(e["iteration"] == 0 for e in lines[1:])

    def test_restart_resumes_mid_trial(self, client, tmp_path):
        create_trial(client)
        drive(client, "t1", rounds=2)
        before = client.get("/trials/t1").json()
        assert before["status"] == "enrolling"

        with TestClient(create_app(data_dir=client.data_dir)) as reopened:
            after = reopened.get("/trials/t1").json()
            assert after == before
            report = reopened.app.state.store.replay_check("t1")
            assert report["match"] is True
            reopened.data_dir = client.data_dir
            final = drive(reopened, "t1", prefix="resume")
            assert final["status"] == "budget-complete"
            assert final["n"] == 10

    def test_restart_reproduces_finished_trial(self, client):
        create_trial(client)
        drive(client, "t1")
        want_trial = client.get("/trials/t1").json()
        want_rec = client.get("/trials/t1/recommendation").json()
        with TestClient(create_app(data_dir=client.data_dir)) as reopened:
            assert reopened.get("/trials/t1").json() == want_trial
            assert reopened.get("/trials/t1/recommendation").json() == want_rec

    def test_missing_trial_after_restart(self, client):
        create_trial(client)
        with TestClient(create_app(data_dir=client.data_dir)) as reopened:
            assert reopened.get("/trials/ghost").status_code == 404


class TestConcurrentSubmission:
    def test_racing_cohorts_apply_exactly_once(self, client):
        create_trial(client)
        store = client.app.state.store
        items = [dict(item, stratum=item["stratum"])
                 for item in fill_items(client.get("/trials/t1").json()["pending"])]
        tuples = [(tuple(i["dose"]), (int(i["stratum"]),), i["y"]) for i in items]

        def submit(cohort_id):
            try:
                return store.submit("t1", cohort_id, items)
            except OutcomeMatchError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=2) as pool:
            results = list(pool.map(submit, ["race-a", "race-b"]))

        errors = [r for r in results if isinstance(r, OutcomeMatchError)]
        accepted = [r for r in results if isinstance(r, dict)]
        assert len(errors) == 1 and len(accepted) == 1
        assert accepted[0]["cohort_complete"] is True
        trial = client.get("/trials/t1").json()
        assert trial["n"] == 6
        # only the winning batch reached the log
        lines = [json.loads(line) for line in
                 (client.data_dir / "t1" / "events.jsonl").read_text().splitlines()]
        assert sum(1 for e in lines if e["type"] == "outcomes") == 1
        # the trial is still usable afterwards
        final = drive(client, "t1", prefix="post-race")
        assert final["status"] == "budget-complete"
