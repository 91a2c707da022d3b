"""Interactive refinement over HTTP: query, then steer the live session.

The service owns the session state; a thin client (or the web console in
frontend/) drives it. Negative refinement re-samples from the session's
recorded noise seeds with the negative branch swapped in; inversion
refinement edits the live latents and reports how much of the previous
query survived (the retention gauge). Runs in-process via the ASGI test
client -- start a real server with `ghostquery serve`.
"""

from fastapi.testclient import TestClient

from _world import CORPUS_PATH, MODEL_PATH, ensure_world
from ghostquery.service import ServerConfig, create_app

ensure_world()
app = create_app(ServerConfig(model_path=str(MODEL_PATH), corpus_path=str(CORPUS_PATH)))


def show(tag, payload, n=5):
    print(f"\n{tag}")
    for e in payload["results"][:n]:
        print(f"  {e['rank']}. {e['id']}  {e['score']:+.4f}  {e['labels']}")


with TestClient(app) as client:
    sid = client.post(
        "/sessions", json={"model": MODEL_PATH.name, "corpus": CORPUS_PATH.name, "seed": 5}
    ).json()["session_id"]
    print(f"session {sid}")

    first = client.post(f"/sessions/{sid}/query", json={"cond": "g2", "w": 2.0, "k": 10}).json()
    show("query: genre g2 (instrument unspecified)", first)

    refined = client.post(
        f"/sessions/{sid}/refine/negative", json={"neg_cond": "i1", "w": 2.0}
    ).json()
    show("refine: 'not instrument i1' (same noise seeds, new guidance)", refined)

    edited = client.post(
        f"/sessions/{sid}/refine/invert", json={"new_cond": "g2,i3", "k_steps": 20, "w": 1.0}
    ).json()
    show(f"refine: invert 20/50 toward (g2, i3), retention {edited['retention']:.3f}", edited)

    history = client.get(f"/sessions/{sid}").json()["history"]
    print(f"\nhistory: {[h['type'] for h in history]} (fully replayable from recorded seeds)")
