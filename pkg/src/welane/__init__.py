"""welane: lane detection toolkit with wavelet-enhanced feature fusion.

Submodules
----------
tensorio    PGM/PPM images, WFPN tensor files, lane text files
preprocess  exposure analysis, adaptive gamma, CLAHE, guided filter
wavelet     Haar DWT, non-local blocks, weighted branch fusion
lanegeom    lane priors, polylines, attention/uniform row sampling
assignloss  Line-IoU, assignment cost, dynamic top-k, training loss
inference   score threshold and Line-IoU NMS
metrics     CULane F1/mF1 and TuSimple accuracy
plotting    report figures
cli         ``welane`` command
"""

__version__ = "0.1.0"
