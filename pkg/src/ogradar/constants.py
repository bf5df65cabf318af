"""Physical constants shared across the package."""

SPEED_OF_LIGHT = 299_792_458.0  # m/s
BOLTZMANN = 1.380649e-23  # J/K

# WGS-84 ellipsoid
WGS84_A = 6_378_137.0  # m
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

# Gravity model used by the propagator (km units)
MU_EARTH = 398_600.4418  # km^3/s^2
R_EARTH = 6_378.137  # km
J2 = 1.08262668e-3
OMEGA_EARTH = 7.292115146706979e-5  # rad/s
