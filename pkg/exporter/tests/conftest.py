import pytest

from ciqa_export import ExportRecipe, export_backbone


@pytest.fixture(scope="session")
def exports(tmp_path_factory):
    """Export all three backbones once with seeded random weights.

    Random weights keep the suite offline-friendly; the numerical-parity
    checks are weight-agnostic, and --weights pretrained produces the same
    artifacts with downloaded parameters when a network is available.
    """
    out = tmp_path_factory.mktemp("exports")
    results = {}
    for name in ("vgg16", "resnet50", "efficientnet_b0"):
        recipe = ExportRecipe(backbone=name, out_dir=str(out / name),
                              goldens=2, seed=7, weights="random",
                              golden_size=64)
        results[name] = export_backbone(recipe)
    return results
