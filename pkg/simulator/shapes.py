import math
from dataclasses import dataclass

import numpy as np
from django.db import models


class Shape(models.TextChoices):
    TRAPEZE = 'trapeze', 'Trapeze'
    OVAL = 'oval', 'Oval'
    CIRCLE = 'circle', 'Circle'
    SQUARE = 'square', 'Square'
    SORTER = 'sorter', 'Sorter'
    PAD = 'pad', 'Pad'


FIXTURES = (Shape.SORTER, Shape.PAD)
GRASPABLE = (Shape.TRAPEZE, Shape.OVAL, Shape.CIRCLE, Shape.SQUARE)

# every fixture shares one id so demonstrations of different tasks refer to "the fixture" alike
FIXTURE_ID = 1


@dataclass(frozen=True)
class ShapeGeometry:
    object_id: int
    height: float
    color: tuple
    # rotational symmetry period of the footprint; None means any rotation maps it onto itself
    symmetry: float = None
    polygon: tuple = None
    ellipse: tuple = None

    @property
    def radius(self):
        """Radius of the circle around the origin that bounds the footprint."""
        if self.polygon is not None:
            return max(math.hypot(x, y) for x, y in self.polygon)
        return max(self.ellipse)

    @property
    def half_extents(self):
        if self.polygon is not None:
            xs, ys = zip(*self.polygon)
            return (max(abs(x) for x in xs), max(abs(y) for y in ys))
        return self.ellipse

    def contains(self, x, y):
        """Vectorised point-in-footprint test in the object's local frame."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.ellipse is not None:
            a, b = self.ellipse
            return (x / a) ** 2 + (y / b) ** 2 <= 1.0
        inside = np.ones(np.broadcast(x, y).shape, dtype=bool)
        vertices = self.polygon
        # convex, counter-clockwise: every edge keeps the interior on its left
        for (x0, y0), (x1, y1) in zip(vertices, vertices[1:] + vertices[:1]):
            inside &= (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0
        return inside


OBJECT_HEIGHT = 0.025
FIXTURE_HEIGHT = 0.005

GEOMETRY = {
    Shape.TRAPEZE: ShapeGeometry(
        object_id=2, height=OBJECT_HEIGHT, color=(0.92, 0.72, 0.12), symmetry=2 * math.pi,
        polygon=((-0.025, -0.02), (0.025, -0.02), (0.015, 0.02), (-0.015, 0.02)),
    ),
    Shape.OVAL: ShapeGeometry(
        object_id=3, height=OBJECT_HEIGHT, color=(0.18, 0.55, 0.92), symmetry=math.pi,
        ellipse=(0.03, 0.018),
    ),
    Shape.CIRCLE: ShapeGeometry(
        object_id=4, height=OBJECT_HEIGHT, color=(0.30, 0.80, 0.30), symmetry=None,
        ellipse=(0.022, 0.022),
    ),
    Shape.SQUARE: ShapeGeometry(
        object_id=5, height=OBJECT_HEIGHT, color=(0.80, 0.30, 0.80), symmetry=math.pi / 2,
        polygon=((-0.02, -0.02), (0.02, -0.02), (0.02, 0.02), (-0.02, 0.02)),
    ),
    Shape.SORTER: ShapeGeometry(
        object_id=FIXTURE_ID, height=FIXTURE_HEIGHT, color=(0.45, 0.50, 0.62), symmetry=math.pi,
        polygon=((-0.07, -0.05), (0.07, -0.05), (0.07, 0.05), (-0.07, 0.05)),
    ),
    Shape.PAD: ShapeGeometry(
        object_id=FIXTURE_ID, height=FIXTURE_HEIGHT, color=(0.85, 0.15, 0.15), symmetry=math.pi,
        polygon=((-0.07, -0.05), (0.07, -0.05), (0.07, 0.05), (-0.07, 0.05)),
    ),
}

# slot centres on the sorter plate, relative to the fixture
SORTER_SLOTS = {
    Shape.TRAPEZE: (-0.035, 0.0),
    Shape.OVAL: (0.035, 0.0),
    Shape.CIRCLE: (0.0, 0.025),
    Shape.SQUARE: (0.0, -0.025),
}


def geometry(shape):
    return GEOMETRY[Shape(shape)]
