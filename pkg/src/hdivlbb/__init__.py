"""H(div)-conforming DG for Stokes, degree-robust inf-sup constants and
H²-stable polynomial extension operators on the reference triangle."""

__version__ = "0.1.0"
