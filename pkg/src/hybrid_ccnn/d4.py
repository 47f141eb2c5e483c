"""The dihedral group of the square acting on the last two axes of an array.

Element ``g`` in ``0..7``: transpose first when ``g >= 4``, then rotate by
``g % 4`` quarter turns. Centers of even-sized arrays fall between sites,
which index reversal handles without special casing.
"""
import numpy as np

ORDER = 8
ELEMENTS = tuple(range(ORDER))


def apply(a, g: int) -> np.ndarray:
    a = np.asarray(a)
    if g >= 4:
        a = np.swapaxes(a, -1, -2)
    return np.rot90(a, g % 4, axes=(-2, -1))


def _build_tables():
    probe = np.arange(9).reshape(3, 3)
    images = [apply(probe, g) for g in ELEMENTS]

    def find(img):
        return next(h for h in ELEMENTS if np.array_equal(images[h], img))

    inverse = [next(h for h in ELEMENTS if np.array_equal(apply(images[g], h), probe)) for g in ELEMENTS]
    compose = [[find(apply(images[h], g)) for h in ELEMENTS] for g in ELEMENTS]
    return tuple(inverse), tuple(map(tuple, compose))


INVERSE, COMPOSE = _build_tables()  # COMPOSE[g][h]: apply h then g


def inverse(g: int) -> int:
    return INVERSE[g]


def orbit(a) -> np.ndarray:
    """Stack of the 8 images, shape ``(8, ...)``."""
    return np.stack([apply(a, g) for g in ELEMENTS])


def symmetrize(a) -> np.ndarray:
    """Group average; an orthogonal projection onto D4-invariant maps.

    Every entry of an orbit averages the same eight numbers; sorting them first
    fixes the summation order so the result is symmetric bit for bit.
    """
    return np.sort(orbit(a), axis=0).mean(axis=0)


def is_symmetric(a, atol: float = 0.0) -> bool:
    a = np.asarray(a)
    return all(np.allclose(apply(a, g), a, rtol=0, atol=atol) for g in ELEMENTS)


def apply_vector(v, g: int):
    """Action on an integer offset ``(dr, dc)`` consistent with :func:`apply`.

    Moving a map by ``g`` carries the pair of sites separated by ``v`` to a
    pair separated by ``apply_vector(v, g)``.
    """
    dr, dc = int(v[0]), int(v[1])
    if g >= 4:
        dr, dc = dc, dr
    for _ in range(g % 4):
        # np.rot90 (counter-clockwise): new[i, j] = old[j, n-1-i]
        dr, dc = -dc, dr
    return dr, dc


def vector_orbit(v):
    return [apply_vector(v, g) for g in ELEMENTS]
