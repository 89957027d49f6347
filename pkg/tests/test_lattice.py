import numpy as np
import pytest

from gfflab.lattice import (BoxSpec, Field, read_field_binary, read_field_csv,
                            write_field_binary, write_field_csv)


def test_box_side_and_interior_count():
    box = BoxSpec(3)
    assert box.side == 8
    assert box.interior_count == 49


def test_from_side_rejects_non_powers():
    with pytest.raises(ValueError):
        BoxSpec.from_side(6)
    with pytest.raises(ValueError):
        BoxSpec.from_side(0)
    assert BoxSpec.from_side(16).n == 4


def test_boundary_predicate():
    box = BoxSpec(2)
    assert box.is_boundary((0, 2))
    assert box.is_boundary((4, 0))
    assert not box.is_boundary((1, 3))
    assert box.is_interior((2, 2))
    assert not box.is_interior((4, 2))


def test_interior_enumeration_matches_flat_index():
    box = BoxSpec(2)
    sites = box.interior_sites()
    assert len(sites) == box.interior_count
    assert sites[0] == (1, 1)
    assert sites[1] == (1, 2)
    for i, site in enumerate(sites):
        assert box.interior_index(site) == i


def test_field_requires_zero_boundary():
    box = BoxSpec(1)
    values = np.zeros((3, 3))
    values[0, 1] = 0.5
    with pytest.raises(ValueError):
        Field(box, values)


def test_field_shape_check():
    with pytest.raises(ValueError):
        Field(BoxSpec(1), np.zeros((4, 4)))


def test_field_from_interior_and_algebra():
    box = BoxSpec(1)
    f = Field.from_interior(box, np.array([[2.0]]))
    g = Field.from_interior(box, np.array([[0.5]]))
    assert (f - g).values[1, 1] == 1.5
    assert (f + g).values[1, 1] == 2.5
    assert f[(0, 0)] == 0.0


def test_binary_round_trip(tmp_path):
    box = BoxSpec(2)
    rng = np.random.default_rng(0)
    f = Field.from_interior(box, rng.normal(size=(3, 3)))
    path = tmp_path / "f.bin"
    write_field_binary(f, path)
    g = read_field_binary(path)
    assert g.box == box
    np.testing.assert_array_equal(f.values, g.values)


def test_csv_round_trip(tmp_path):
    box = BoxSpec(2)
    rng = np.random.default_rng(1)
    f = Field.from_interior(box, rng.normal(size=(3, 3)))
    path = tmp_path / "f.csv"
    write_field_csv(f, path)
    g = read_field_csv(path)
    np.testing.assert_array_equal(f.values, g.values)
