import pathlib

import pytest

from annorefine.interchange import TraceSample

REPO_ROOT = pathlib.Path(__file__).resolve().parent.parent
CANONICAL = REPO_ROOT / "docs" / "examples"
DATA = pathlib.Path(__file__).resolve().parent / "data"


@pytest.fixture
def canonical():
    return CANONICAL


@pytest.fixture
def data_dir():
    return DATA


def make_trace(image_id=1, epoch=0, **overrides) -> TraceSample:
    base = dict(
        image_id=image_id,
        epoch=epoch,
        loss_rpn_cls=0.5,
        loss_rpn_bbox=0.6,
        loss_cls=0.4,
        loss_bbox=0.7,
        grad_rpn_cls=0.01,
        grad_rpn_bbox=0.02,
        grad_cls=0.03,
        grad_bbox=0.04,
        n_matched=2,
        n_false_positive=1,
        n_ground_truth=3,
        learning_rate=0.05,
    )
    base.update(overrides)
    return TraceSample(**base)
