"""Drive the HTTP API end to end with nothing but the standard library.

Starts the service in a background thread, creates a session, pulls
renders, submits a mask edit as a job, polls it to completion, and
verifies the render changed. This is the exact surface a browser
frontend talks to.

    python3 demos/05_drive_the_service.py --checkpoint runs/demo/checkpoint_final.lcnf
"""

import argparse
import base64
import io
import json
import shutil
import tempfile
import threading
import time
import urllib.request
from pathlib import Path

import uvicorn

from lcnerf.service import create_app


def api(base, path, payload=None):
    request = urllib.request.Request(
        base + path,
        data=None if payload is None else json.dumps(payload).encode(),
        headers={"content-type": "application/json"} if payload else {})
    with urllib.request.urlopen(request) as response:
        body = response.read()
    return json.loads(body) if b"json" in bytes(
        response.headers.get("content-type", ""), "ascii") else body


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", default="runs/demo/checkpoint_final.lcnf")
    parser.add_argument("--port", type=int, default=8901)
    args = parser.parse_args()

    # The service serves every .lcnf in a directory; stage ours alone.
    staging = Path(tempfile.mkdtemp(prefix="lcnerf-demo-"))
    shutil.copy(args.checkpoint, staging / "demo.lcnf")
    app = create_app(staging, default_edit_iterations=100, edit_preview_every=25)
    server = uvicorn.Server(uvicorn.Config(app, port=args.port, log_level="error"))
    threading.Thread(target=server.run, daemon=True).start()
    base = f"http://127.0.0.1:{args.port}/api/v1"
    while not server.started:
        time.sleep(0.05)

    print("checkpoints:", api(base, "/checkpoints")["checkpoints"])
    session = api(base, "/sessions",
                  {"checkpoint": "demo.lcnf", "seed": 7})["session_id"]
    schema = api(base, f"/sessions/{session}/schema")
    print(f"session {session}:",
          ", ".join(label["name"] for label in schema["labels"]))

    render_png = api(base, f"/sessions/{session}/render?azimuth=0.2")
    mask_png = api(base, f"/sessions/{session}/mask")
    print(f"render {len(render_png)} bytes, mask {len(mask_png)} bytes")

    # Edit over HTTP: mutate the current mask PNG and post it back.
    from PIL import Image
    import numpy as np
    source = Image.open(io.BytesIO(mask_png))
    mask = np.asarray(source)
    region = 1
    shifted = mask.copy()
    shifted[mask == region] = 0
    shifted[np.roll(mask == region, 2, axis=0)] = region
    edited = Image.fromarray(shifted, mode="P")
    # Keep the served palette: saving an indexed PNG with a blank palette
    # lets the encoder merge duplicate colors and renumber the labels.
    edited.putpalette(source.getpalette())
    buffer = io.BytesIO()
    edited.save(buffer, format="PNG")

    job = api(base, f"/sessions/{session}/edits", {
        "mask_png": base64.b64encode(buffer.getvalue()).decode(),
        "region_ids": [region],
    })["job_id"]
    while True:
        status = api(base, f"/jobs/{job}")
        print(f"  job {job}: {status['status']} "
              f"iteration {status['iteration']} loss {status['loss']}")
        if status["status"] in ("done", "failed"):
            break
        time.sleep(1.0)

    after = api(base, f"/sessions/{session}/render?azimuth=0.2")
    print(f"render changed after edit: {after != render_png}")
    info = api(base, f"/sessions/{session}")
    print(f"history length {info['history_length']}, status {info['status']}")
    server.should_exit = True
    shutil.rmtree(staging)


if __name__ == "__main__":
    main()
