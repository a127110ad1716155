"""Exception hierarchy shared across the pipeline stages."""


class CrushlabError(Exception):
    """Base class for all crushlab errors."""


class DegenerateSpec(CrushlabError):
    """Particle specification with non-positive diameter or scale."""


class EmptyCell(CrushlabError):
    """A Voronoi seed produced an empty cell (numerical degeneracy)."""


class DisconnectedMesh(CrushlabError):
    """Fragment adjacency graph is not connected."""


class NonConvergence(CrushlabError):
    """Equilibrium solve failed to reach the residual tolerance."""


class InvalidRecord(CrushlabError):
    """Crush record does not contain a valid breakage event."""


class InsufficientData(CrushlabError):
    """Fewer than the minimum number of valid simulations for a fit."""


class DegenerateSample(CrushlabError):
    """All strengths equal; the linearized Weibull fit is undefined."""


class ShapeMismatch(CrushlabError):
    """Tensor shapes incompatible with the model configuration."""


class DisconnectedGraph(CrushlabError):
    """Fragment graph is not connected; rejected as a sample."""


class NonFinite(CrushlabError):
    """Loss or gradient became NaN/Inf (training divergence)."""


class UnknownTask(CrushlabError):
    """Split task is not one of diameter / shape / axis."""


class SchemaMismatch(CrushlabError):
    """Input file declares an unsupported schema version."""


class MissingInput(CrushlabError):
    """A pipeline stage input file does not exist."""
