import numpy as np

from thermokfac.linalg import symmetrize


def wishart_psd(n: int, rank: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random positive semidefinite matrix of controlled rank."""
    x = rng.standard_normal((n, rank))
    return symmetrize(scale * x @ x.T / rank)
