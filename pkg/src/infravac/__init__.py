"""Numerical diagnostics for charged sectors in front of KPR-like infravacua.

Modules
-------
modespace      radial shell grids, angular truncations, mode functions
transforms     position-space profiles and their momentum-space images
charges        charge automorphisms and the linear form l_gamma
infravacuum    KPR shell data, the symplectic operators T1, T2, T
localization   dilation limits, cone-localised intertwiners, sector tests
cli            configs, scenarios and reports
"""

__version__ = "0.1.0"
