import numpy as np
import pytest
from fastapi.testclient import TestClient

from stereolabel.labeling import fps_select
from stereolabel.sessions import estimate_poses_stage, load_session
from stereolabel.service import create_app
from stereolabel.synthetic import make_session


@pytest.fixture(scope="module")
def service_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("sessions")
    truths = {}
    _, truths["demo"] = make_session(
        root / "demo", session_id="demo", n_frames=20, seed=100, annotate=False
    )
    _, truths["tiny"] = make_session(
        root / "tiny", session_id="tiny", n_frames=8, seed=101, render=False, annotate=False
    )
    return root, truths


@pytest.fixture()
def client(service_env):
    root, _ = service_env
    return TestClient(create_app(root))


def scripted_annotations(client, truth, sid, n_kp, mislabel_frame=None, mislabel_px=10.0):
    """Click every keypoint at its true pixel in the 6 FPS-selected frames."""
    selected = client.get(f"/sessions/{sid}/select", params={"k": 6}).json()["frame_ids"]
    annotations = []
    for fid in selected:
        for kp_id in range(1, n_kp + 1):
            u, v, _ = truth.labels[fid][kp_id - 1]
            if fid == mislabel_frame and kp_id == 1:
                u, v = u + mislabel_px, v + mislabel_px
            annotations.append({"frame_id": fid, "keypoint_id": kp_id, "u": u, "v": v})
    return selected, annotations


class TestReadEndpoints:
    def test_sessions_index(self, client):
        sids = {s["session_id"] for s in client.get("/sessions").json()}
        assert {"demo", "tiny"} <= sids

    def test_session_detail(self, client):
        doc = client.get("/sessions/demo").json()
        assert doc["n_keypoints"] == 4
        assert doc["image_width"] == 640
        assert len(doc["frames"]) == 20
        assert doc["symmetry"] == [[1, 2, 3, 4], [1, 2, 4, 3]]

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404

    def test_frame_images(self, client):
        r = client.get("/sessions/demo/frames/000/left.png")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert client.get("/sessions/demo/frames/000/depth.png").status_code == 404
        assert client.get("/sessions/demo/frames/999/left.png").status_code == 404

    def test_select_matches_library(self, client, service_env):
        root, _ = service_env
        doc = client.get("/sessions/demo/select", params={"k": 6}).json()
        session = load_session(root / "demo")
        session.poses = estimate_poses_stage(session)
        posed = [fid for fid in session.frame_ids if fid in session.poses]
        idx = fps_select([session.poses[fid].pose for fid in posed], 6)
        assert doc["frame_ids"] == [posed[i] for i in idx]

    def test_select_k_out_of_range(self, client):
        assert client.get("/sessions/demo/select", params={"k": 100}).status_code == 422

    def test_labels_and_qa_404_before_pipeline(self, client):
        assert client.get("/sessions/demo/labels").status_code == 404
        assert client.get("/sessions/demo/qa").status_code == 404


class TestAnnotationValidation:
    def test_put_get_round_trip(self, client):
        payload = {"annotations": [{"frame_id": "000", "keypoint_id": 1, "u": 12.5, "v": 34.25}]}
        assert client.put("/sessions/tiny/annotations", json=payload).status_code == 200
        assert client.get("/sessions/tiny/annotations").json() == payload

    def test_put_rejects_bad_payloads(self, client):
        cases = [
            {"frame_id": "000", "keypoint_id": 99, "u": 1.0, "v": 1.0},
            {"frame_id": "nope", "keypoint_id": 1, "u": 1.0, "v": 1.0},
            {"frame_id": "000", "keypoint_id": 1, "u": -5.0, "v": 1.0},
        ]
        for bad in cases:
            r = client.put("/sessions/tiny/annotations", json={"annotations": [bad]})
            assert r.status_code == 422, bad

    def test_triangulate_single_view_is_422(self, client):
        payload = {"annotations": [{"frame_id": "000", "keypoint_id": 1, "u": 100.0, "v": 100.0}]}
        assert client.put("/sessions/tiny/annotations", json=payload).status_code == 200
        r = client.post("/sessions/tiny/triangulate")
        assert r.status_code == 422
        assert "need >= 2" in r.json()["detail"]


class TestAnnotationLoop:
    def test_accurate_labels_accept(self, client, service_env):
        _, truths = service_env
        _, annotations = scripted_annotations(client, truths["demo"], "demo", 4)
        assert client.put("/sessions/demo/annotations", json={"annotations": annotations}).status_code == 200
        r = client.post("/sessions/demo/triangulate")
        assert r.status_code == 200, r.text
        doc = r.json()
        assert doc["qa"]["accepted"] is True
        assert all(res["residual_px"] < 1.0 for res in doc["residuals"])
        assert len(doc["keypoints"]) == 4
        # labels and qa are now served
        labels = client.get("/sessions/demo/labels").json()["labels"]
        assert len(labels) == 20
        assert client.get("/sessions/demo/qa").json()["accepted"] is True

    def test_small_mislabel_is_localized_but_absorbed(self, client, service_env):
        # a single-frame 10 px mislabel cannot exceed the 5 px RMSE gate (a
        # 6-view least-squares residual is bounded by 10/sqrt(6) = 4.08 px),
        # but the worst-residual frame must still point at the bad frame
        _, truths = service_env
        selected, _ = scripted_annotations(client, truths["demo"], "demo", 4)
        bad_frame = selected[2]
        _, annotations = scripted_annotations(
            client, truths["demo"], "demo", 4, mislabel_frame=bad_frame, mislabel_px=10.0
        )
        assert client.put("/sessions/demo/annotations", json={"annotations": annotations}).status_code == 200
        doc = client.post("/sessions/demo/triangulate").json()
        assert doc["worst_frame_id"] == bad_frame
        worst = max(doc["residuals"], key=lambda r: r["residual_px"])
        assert worst["keypoint_id"] == 1 and worst["frame_id"] == bad_frame

    def test_large_mislabel_rejects_and_names_worst_frame(self, client, service_env):
        _, truths = service_env
        selected, _ = scripted_annotations(client, truths["demo"], "demo", 4)
        bad_frame = selected[2]
        _, annotations = scripted_annotations(
            client, truths["demo"], "demo", 4, mislabel_frame=bad_frame, mislabel_px=25.0
        )
        assert client.put("/sessions/demo/annotations", json={"annotations": annotations}).status_code == 200
        doc = client.post("/sessions/demo/triangulate").json()
        assert doc["qa"]["accepted"] is False
        assert doc["qa"]["worst_keypoint_id"] == 1
        assert doc["worst_frame_id"] == bad_frame
        assert client.get("/sessions/demo/qa").json()["accepted"] is False

    def test_stale_outputs_cleared_on_annotation_change(self, client, service_env):
        _, truths = service_env
        _, annotations = scripted_annotations(client, truths["demo"], "demo", 4)
        client.put("/sessions/demo/annotations", json={"annotations": annotations})
        client.post("/sessions/demo/triangulate")
        assert client.get("/sessions/demo/labels").status_code == 200
        client.put("/sessions/demo/annotations", json={"annotations": annotations[: 4 * 6]})
        assert client.get("/sessions/demo/labels").status_code == 404
        assert client.get("/sessions/demo/qa").status_code == 404


class TestStaticHosting:
    def test_ui_bundle_served_at_root(self, service_env, tmp_path):
        root, _ = service_env
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>annotator</body></html>")
        client = TestClient(create_app(root, ui_dir=ui))
        r = client.get("/")
        assert r.status_code == 200
        assert "annotator" in r.text
        # API routes still take precedence over the static mount
        assert client.get("/sessions").status_code == 200
