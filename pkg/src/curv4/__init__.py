"""curv4: numerical verification lab for curvature identities of harmonic
2-forms on oriented Riemannian 4-manifolds."""

__version__ = "0.1.0"
