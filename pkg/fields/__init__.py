"""
Lattice fields and flow-line fans
"""
