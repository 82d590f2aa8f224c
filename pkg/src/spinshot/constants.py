"""Physical constants used across the package (CODATA 2018).

All Zeeman arithmetic in this package reduces to the single combination
g * MU_B * B / H, so these two constants are the only fundamental inputs.

=========  =======================  ==================
symbol     value                    unit
=========  =======================  ==================
H          6.62607015e-34           J / Hz (exact)
MU_B       9.2740100783e-24         J / T
=========  =======================  ==================
"""

# Planck constant, exact by SI definition.
H = 6.62607015e-34

# Bohr magneton.
MU_B = 9.2740100783e-24

# Handy derived ratio: splitting in GHz per (g-factor * Tesla).
GHZ_PER_G_TESLA = MU_B / H / 1e9
