import numpy as np
import pytest

from oaqsm.physics import sphere_mask
from oaqsm.phantom import (Lesion, PhantomSpec, Primitive, default_spec, format_phantom_config,
                           generate_phantom, parse_phantom_config, random_spec)


def spec32(**kw):
    return PhantomSpec((32, 32, 32), (15.5,) * 3, (10, 11, 9), margin=4, **kw)


def test_empty_phantom_is_zero():
    chi, mask = generate_phantom(spec32())
    assert not chi.any() and mask.sum() > 0


def test_single_sphere():
    s = Primitive("sphere", (15, 16, 15), 0.1, radius=4)
    chi, mask = generate_phantom(spec32(primitives=(s,)))
    inside = s.voxels(chi.shape)
    assert np.all(chi[inside] == 0.1)
    assert not chi[~inside].any()


def test_lesion_overwrites():
    s = Primitive("sphere", (15, 16, 15), 0.1, radius=5)
    les = Lesion((15, 16, 15), 2)
    chi, _ = generate_phantom(spec32(primitives=(s,), lesion=les))
    assert np.all(chi[sphere_mask(chi.shape, les.center, les.radius)] == 0.8)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive("torus", (0, 0, 0), 0.1, radius=1)
    with pytest.raises(ValueError):
        Primitive("sphere", (0, 0, 0), 11.0, radius=1)
    with pytest.raises(ValueError):
        Primitive("cuboid", (0, 0, 0), 0.1)
    with pytest.raises(ValueError):
        generate_phantom(PhantomSpec((32,) * 3, (15.5,) * 3, (14, 14, 14), margin=4))


def test_random_spec_deterministic():
    a = generate_phantom(random_spec((32,) * 3, np.random.default_rng(3), lesion=True),
                         np.random.default_rng(4))
    b = generate_phantom(random_spec((32,) * 3, np.random.default_rng(3), lesion=True),
                         np.random.default_rng(4))
    assert np.array_equal(a[0], b[0])
    chi, mask = a
    assert not chi[mask == 0].any()
    assert np.abs(chi).max() <= 10


def test_config_roundtrip():
    spec = default_spec((32, 32, 32), margin=4, lesion=True)
    spec = PhantomSpec(spec.dims, spec.mask_center, spec.mask_radii, margin=4, lesion=spec.lesion,
                       primitives=(Primitive("cylinder", (15, 15, 15), 0.2, radius=2,
                                             half_length=5, axis=(0, 0, 1)),
                                   Primitive("cuboid", (14, 16, 15), -0.05,
                                             half_extents=(2, 3, 2))))
    again = parse_phantom_config(format_phantom_config(spec))
    assert again == spec
    assert np.array_equal(generate_phantom(again)[0], generate_phantom(spec)[0])


def test_config_errors():
    with pytest.raises(ValueError):
        parse_phantom_config("margin = 3\n")
    with pytest.raises(ValueError):
        parse_phantom_config("dims = 8, 8, 8\nbogus = 1\n")
    with pytest.raises(ValueError):
        parse_phantom_config("dims = 8, 8\n")
