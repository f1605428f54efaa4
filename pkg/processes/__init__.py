"""
Stochastic processes: Bessel processes and Loewner evolution
"""
