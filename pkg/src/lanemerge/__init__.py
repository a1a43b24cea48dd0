"""Lane-change behavior planning with belief-switched driver models.

The package splits into:

* :mod:`lanemerge.frenet` - road-aligned state types and kinematics
* :mod:`lanemerge.driver_models` - IDM/VDM predictors and parameter
  distributions (with bundled reference calibrations)
* :mod:`lanemerge.calibration` - per-trial maximum-likelihood fitting,
  outlier filtering, distribution fitting, synthetic trial generation
* :mod:`lanemerge.yielding` - the logistic yield classifier
* :mod:`lanemerge.planner` - POMDP transition/reward and the Monte-Carlo
  tree search
* :mod:`lanemerge.harness` - closed-loop episodes, scenario generation,
  replay evaluation, metrics
* :mod:`lanemerge.cli` - the `lanemerge` command
"""

__version__ = "0.1.0"
