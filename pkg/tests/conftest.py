import pytest

from chainlens import Pipeline, Registry, TrainConfig
from chainlens.blocks import DatasetBlock, ModelBlock

from fixtures_loan import loan_dataset, threshold_dataset, xor_dataset


@pytest.fixture(scope="session")
def loan_ds():
    return loan_dataset()


@pytest.fixture()
def fresh_loan_ds():
    return loan_dataset()


@pytest.fixture()
def threshold_ds():
    return threshold_dataset()


@pytest.fixture()
def xor_ds():
    return xor_dataset()


def build_threshold_pipeline(dataset=None, model_kind="logistic"):
    """Dataset | Model pipeline over the separable income fixture."""
    ds = dataset if dataset is not None else threshold_dataset()
    registry = Registry()
    dataset_block = DatasetBlock(ds, registry)
    model_block = ModelBlock(ds, model_kind, registry, block_id="model",
                             config=TrainConfig(seed=0))
    pipeline = Pipeline(dataset_block.handle | model_block.handle, registry).bind()
    model_block.ensure_trained()
    return pipeline, dataset_block, model_block


@pytest.fixture()
def threshold_pipeline():
    return build_threshold_pipeline()
