"""Generate a surface and a region, build both scan paths and run the scripted expert."""

from __future__ import annotations

import numpy as np

from mact.evaluation import ExpertAgent, evaluate_rollout
from mact.sim import EnvConfig, reset
from mact.taskgen import TaskSpec, contour_path, raster_path

cfg = EnvConfig()
state, obs = reset(cfg, seed=0)

# the region lives in its own frame; at reset that frame coincides with the world
region, field = state.region, state.field
print(f"region: {len(region.boundary)} vertices, area {region.area:.1f} mm^2, perimeter {region.perimeter:.1f} mm")
print(f"surface relief under the region: {np.ptp(field.sample(*region.boundary.T)):.2f} mm")

contour = contour_path(region, step=5.0, field=field, start=state.probe.position)
raster = raster_path(region, line_spacing=5.0, step=5.0, field=field)
print(f"contour path: {len(contour)} waypoints; raster path: {len(raster)} waypoints")

# consecutive raster waypoints never jump more than one step
gaps = np.linalg.norm(np.diff(raster.waypoints[:, :2], axis=0), axis=1)
print(f"largest raster gap {gaps.max():.2f} mm")

for kind in ("contour", "raster"):
    kcfg = EnvConfig(task=TaskSpec(kind=kind))
    trace, metrics = evaluate_rollout(ExpertAgent(), kcfg, seed=0)
    print(f"expert {kind}: coverage {metrics.coverage_pct:.1f}%, penalty {metrics.penalty:.3f}, "
          f"score {metrics.score:.2f} over {len(trace)} steps")
