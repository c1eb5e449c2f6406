import pytest
import torch

from gridedit.errors import ValidationError
from gridedit.providers import ALL_CATEGORIES, MockSegmenter, MockUnifier
from gridedit.selective import SelectiveMask, build_mask, selective_area_loss

from fdcheck import assert_close_to_fd, fd_gradient, pick_coords
from conftest import rand_image


@pytest.fixture(scope="module")
def seg():
    return MockSegmenter()


@pytest.fixture(scope="module")
def uni():
    return MockUnifier()


def half_person_grid():
    """Left half crimson-ish (person bin), right half navy-ish (background)."""
    img = torch.zeros(4, 8, 3, dtype=torch.float64)
    img[:, :4] = torch.tensor([0.55, 0.08, 0.08], dtype=torch.float64)
    img[:, 4:] = torch.tensor([0.10, 0.12, 0.45], dtype=torch.float64)
    return img


# ---------------------------------------------------------------------- mask

def test_mask_covers_selected_half_counting_oracle(seg, uni):
    grid = half_person_grid()
    mask = build_mask(grid, seg, uni, ["human"])
    assert mask.mask.shape == (4, 8)
    assert int(mask.mask.sum()) == 16  # exactly the person half
    assert torch.equal(mask.mask[:, :4], torch.ones(4, 4, dtype=torch.float64))
    assert mask.source_classes == ("person",)


def test_mask_empty_selection_all_zero(seg, uni):
    mask = build_mask(half_person_grid(), seg, uni, [])
    assert int(mask.mask.sum()) == 0


def test_mask_full_selection_all_one(seg, uni):
    mask = build_mask(half_person_grid(), seg, uni, list(ALL_CATEGORIES))
    assert int(mask.mask.sum()) == 32


def test_mask_deterministic(seg, uni):
    grid = rand_image(6, 6, 3, seed=1)
    a = build_mask(grid, seg, uni, ["human", "creature"])
    b = build_mask(grid, seg, uni, ["human", "creature"])
    assert torch.equal(a.mask, b.mask)
    assert a.source_classes == b.source_classes


def test_mask_provider_contract_violation(uni):
    class BrokenSegmenter:
        def segment(self, img):
            label_map = torch.ones(img.shape[0], img.shape[1],
                                   dtype=torch.int64) * 7
            return label_map, [(0, "person")]

    with pytest.raises(ValidationError, match="class table"):
        build_mask(half_person_grid(), BrokenSegmenter(), uni, ["human"])


def test_selective_mask_binary_validation():
    with pytest.raises(ValidationError):
        SelectiveMask(mask=torch.full((2, 2), 0.5, dtype=torch.float64),
                      source_classes=())


# ---------------------------------------------------------------------- loss

def test_loss_zero_for_identical_grids():
    grid = rand_image(4, 4, 3, seed=2)
    mask = torch.ones(4, 4, dtype=torch.float64)
    assert selective_area_loss(grid, grid, mask).item() == 0.0


def test_loss_zero_for_empty_mask():
    a = rand_image(4, 4, 3, seed=3)
    b = rand_image(4, 4, 3, seed=4)
    mask = torch.zeros(4, 4, dtype=torch.float64)
    assert selective_area_loss(a, b, mask).item() == 0.0


def test_loss_single_pixel_summation_oracle():
    # 2x2 single-channel grids, one masked pixel with |diff| = 0.5:
    # (1/4) * 0.25 = 0.0625
    pseudo = torch.zeros(2, 2, 1, dtype=torch.float64)
    truth = torch.zeros(2, 2, 1, dtype=torch.float64)
    truth[0, 0, 0] = 0.5
    mask = torch.zeros(2, 2, dtype=torch.float64)
    mask[0, 0] = 1.0
    loss = selective_area_loss(pseudo, truth, mask).item()
    assert abs(loss - 0.0625) < 1e-12


def test_loss_all_ones_mask_equals_mse():
    a = rand_image(6, 6, 3, seed=5)
    b = rand_image(6, 6, 3, seed=6)
    mask = torch.ones(6, 6, dtype=torch.float64)
    loss = selective_area_loss(a, b, mask).item()
    assert loss == pytest.approx(((a - b) ** 2).mean().item(), abs=1e-15)


def test_loss_monotone_in_mask():
    a = rand_image(4, 4, 3, seed=7)
    b = rand_image(4, 4, 3, seed=8)
    mask = torch.zeros(4, 4, dtype=torch.float64)
    previous = 0.0
    order = [(i, j) for i in range(4) for j in range(4)]
    for i, j in order:
        mask[i, j] = 1.0
        value = selective_area_loss(a, b, mask).item()
        assert value >= previous - 1e-15
        previous = value


def test_loss_gradient_formula_and_finite_differences():
    # gradient w.r.t. pseudo is 2 * mask * (pseudo - truth) / (N * C)
    pseudo = rand_image(4, 4, 2, seed=9).requires_grad_(True)
    truth = rand_image(4, 4, 2, seed=10)
    mask = (rand_image(4, 4, 1, seed=11)[:, :, 0] > 0.5).to(torch.float64)
    loss = selective_area_loss(pseudo, truth, mask)
    (analytic,) = torch.autograd.grad(loss, pseudo)
    expected = 2.0 * mask[:, :, None] * (pseudo.detach() - truth) / (16 * 2)
    assert torch.allclose(analytic, expected, atol=1e-15)

    def loss_value():
        with torch.no_grad():
            return selective_area_loss(pseudo, truth, mask)

    fd = fd_gradient(loss_value, pseudo, pick_coords(pseudo, count=8))
    assert_close_to_fd(analytic, fd, rtol=1e-4)


def test_loss_mask_normalized_variant():
    pseudo = torch.zeros(2, 2, 1, dtype=torch.float64)
    truth = torch.zeros(2, 2, 1, dtype=torch.float64)
    truth[0, 0, 0] = 0.5
    mask = torch.zeros(2, 2, dtype=torch.float64)
    mask[0, 0] = 1.0
    loss = selective_area_loss(pseudo, truth, mask, normalize_by_mask=True)
    assert loss.item() == pytest.approx(0.25, abs=1e-15)
    empty = torch.zeros(2, 2, dtype=torch.float64)
    assert selective_area_loss(pseudo, truth, empty,
                               normalize_by_mask=True).item() == 0.0


def test_loss_shape_validation():
    a = rand_image(4, 4, 3, seed=12)
    with pytest.raises(ValidationError):
        selective_area_loss(a, rand_image(4, 2, 3, seed=13),
                            torch.ones(4, 4, dtype=torch.float64))
    with pytest.raises(ValidationError):
        selective_area_loss(a, a, torch.ones(2, 2, dtype=torch.float64))
