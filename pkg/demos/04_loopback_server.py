"""
Edge-to-server loopback
=======================

The intended deployment splits the pipeline across a TCP link: a cheap
edge device erases and squeezes, a server with the model reconstructs.
This demo runs both ends in one process over loopback, ships a few
images concurrently, and prints the six-stage timing report.
"""

import tempfile
import threading
from pathlib import Path

import numpy as np

from easz.image import make_image, store_raster
from easz.model import ModelConfig, init_params, save_checkpoint
from easz.pipeline import STAGES, PipelineConfig
from easz.transport import ReconstructionServer, edge_send

rng = np.random.default_rng(0)
workdir = Path(tempfile.mkdtemp(prefix="easz_demo_"))

# A few 64x64 grayscale test images on "the edge".
sources = []
for i in range(4):
    img = make_image(rng.integers(0, 256, (64, 64, 1), dtype=np.uint8))
    path = workdir / f"edge_{i}.pgm"
    path.write_bytes(store_raster(img))
    sources.append(path)

# The server loads its checkpoint once; here an untrained toy model --
# the transport neither knows nor cares how good the weights are.
mcfg = ModelConfig(subpatch_b=4, channels=1, d_model=16, grid_side=8,
                   heads=2, ffn_multiplier=2)
checkpoint = save_checkpoint(init_params(mcfg, seed=0), mcfg)

cfg = PipelineConfig(erased_per_row=2, seed=3)
results = {}

with ReconstructionServer(0, checkpoint, workdir / "received") as server:
    print(f"server listening on 127.0.0.1:{server.port}")

    def ship(path):
        timings, code, message = edge_send(path, "127.0.0.1", server.port, cfg)
        results[path.name] = timings
        print(f"  {path.name}: status {code}, server wrote {message}")

    threads = [threading.Thread(target=ship, args=(p,)) for p in sources]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

print(f"\n{len(results)} transfers completed; stage timings for one of them:")
timings = results[sources[0].name]
for stage in STAGES:
    print(f"  {stage:>13}: {timings.stages[stage]:8.2f} ms")
print(f"  {'end_to_end':>13}: {timings.end_to_end:8.2f} ms")

print(f"\nreceived rasters are in {workdir / 'received'}")
