"""
Numerical core of epflow: drift models, local Riccati problems, rate
functions, the grid eigen-solver and the Monte Carlo simulator.
"""
