import numpy as np
import pytest

from xaigan.imageio import image_grid, read_netpbm, write_mask_pgm, write_netpbm


def test_pgm_round_trip(tmp_path):
    img = np.array([[[-1.0, 0.0, 1.0]]])
    write_netpbm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 1\n255\n")
    assert np.array_equal(read_netpbm(tmp_path / "a.pgm"), [[[0, 128, 255]]])


def test_ppm_channel_order(tmp_path, rng):
    img = rng.uniform(-1, 1, size=(3, 4, 5))
    write_netpbm(tmp_path / "c.ppm", img)
    back = read_netpbm(tmp_path / "c.ppm")
    assert back.shape == (3, 4, 5)
    assert np.array_equal(back, np.clip(np.rint((img + 1) * 127.5), 0, 255).astype(np.uint8))
    with pytest.raises(ValueError):
        write_netpbm(tmp_path / "x.pgm", np.zeros((2, 3, 3)))


def test_mask_dump(tmp_path):
    mask = np.zeros((3, 2, 2))
    mask[1, 0, 1] = 1.0
    mask[2, 1, 0] = 0.5
    write_mask_pgm(tmp_path / "m.pgm", mask)
    assert np.array_equal(read_netpbm(tmp_path / "m.pgm")[0], [[0, 255], [128, 0]])


def test_grid_layout():
    imgs = np.stack([np.full((1, 2, 2), v) for v in (0.0, 0.5, 1.0)])
    grid = image_grid(imgs, rows=2, cols=2, pad=1)
    assert grid.shape == (1, 7, 7)
    assert np.all(grid[0, 1:3, 4:6] == 0.5) and np.all(grid[0, 4:6, 1:3] == 1.0)
    assert np.all(grid[0, 4:6, 4:6] == -1.0)
