"""The remote guidance wire protocol: a loopback server wrapping an
in-process provider, driven through a real socket client.

A production diffusion backend implements the same length-prefixed
protocol (magic TGRW, version, handshake with capability negotiation,
request/response frames); the engine only ever sees the provider
interface.

Run:  python3 demos/05_remote_guidance_protocol.py
"""

import numpy as np

from lexsplat import look_at
from lexsplat.errors import ProtocolError
from lexsplat.guidance import (CAP_MULTI_VIEW, NullProvider, add_noise,
                               make_request)
from lexsplat.wire import GuidanceServer, RemoteGuidanceProvider

rng = np.random.default_rng(2)

# --- a guidance request: 4 rendered views + their frozen conditioning --------
cameras = []
for i, az in enumerate((0, 90, 180, 270)):
    rad = np.radians(az)
    cameras.append(look_at(
        [4 * np.cos(rad), 4 * np.sin(rad), 1.5], [0, 0, 0],
        fx=30.0, fy=30.0, cx=16.0, cy=16.0, width=32, height=32,
        camera_id=f"ring-{i}"))
rendered = [rng.uniform(0, 1, (32, 32, 3)) for _ in range(4)]
original = [rng.uniform(0, 1, (32, 32, 3)) for _ in range(4)]
request = make_request(rendered, original, cameras, noise_level=0.1,
                       noise_seed=42, prompt="make the bear a panda",
                       provider_config={"cfg_image": "1.5",
                                        "cfg_text": "7.5"})
print(f"request: prompt {request.prompt!r}, t={request.noise_level}, "
      f"4 views of {rendered[0].shape}")

# noising is seeded and reproducible; backends apply it internally
noisy = add_noise(rendered[0], request.noise_level, request.noise_seed)
again = add_noise(rendered[0], request.noise_level, request.noise_seed)
assert np.array_equal(noisy, again)
print(f"seeded noising reproducible, perturbation rms "
      f"{np.sqrt(np.mean((noisy - rendered[0])**2)):.4f}")

# --- serve a zero-residual provider over a real socket -----------------------
with GuidanceServer(NullProvider()) as server:
    host, port = server.address
    print(f"loopback guidance server on {host}:{port}")
    with RemoteGuidanceProvider.connect((host, port)) as client:
        print(f"handshake ok: capabilities {sorted(client.capabilities)}, "
              f"max image {client.max_h}x{client.max_w}")
        response = client.guide(request)
        norms = [float(np.abs(r).max()) for r in response.residuals]
        print(f"got 4 residuals, max magnitudes {norms}")
        assert all(n == 0.0 for n in norms)

# --- protocol failures are loud, not silent ----------------------------------
with GuidanceServer(NullProvider(), version=2) as stale_server:
    try:
        RemoteGuidanceProvider.connect(stale_server.address)
    except ProtocolError as exc:
        print(f"version mismatch rejected as expected: {exc}")

with GuidanceServer(NullProvider(),
                    capabilities=("image_edit",)) as limited_server:
    try:
        RemoteGuidanceProvider.connect(limited_server.address,
                                       required_capability=CAP_MULTI_VIEW)
    except ProtocolError as exc:
        print(f"capability mismatch rejected as expected: {exc}")
