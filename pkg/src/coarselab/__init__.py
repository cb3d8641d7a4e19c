"""coarse-lab: a computational laboratory for sublinear coarse geometry.

Graph-realized geodesic spaces, sublinear gauge functions, empirical
Morse/contraction testers, free-product (relatively hyperbolic) machinery,
and seeded random-walk statistics, all at desk scale.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1

def csv_header() -> str:
    """Header comment line stamped on every CSV this package writes."""
    return f"# coarse-lab v{__version__} schema={SCHEMA_VERSION}"
