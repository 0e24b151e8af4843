import numpy as np
import pytest

from hyperhash.utilities import PipelineConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config():
    """A pipeline configuration small enough to run end to end in seconds."""
    return PipelineConfig(
        seed=11,
        dimension=256,
        z=16,
        z_prime=8,
        classes=4,
        encoder_epochs=3,
        encoder_batch_size=32,
        encoder_learning_rate=2e-3,
        length_scale=0.1,
        bits=16,
        hash_epochs=3,
        hash_batch_size=16,
        k=10,
        radii=(0.1, 0.2, 0.3, 0.4),
        synth_images=40,
        synth_queries=8,
        synth_classes=4,
        synth_z=16,
        min_objects=1,
        max_objects=3,
    ).validate()


@pytest.fixture(scope="session")
def cluster_task():
    """Builds the 8-cluster label retrieval task: 512 items, the first n_queries are queries."""
    from hyperhash.eval_metrics import LabeledItem
    from hyperhash.experiments import cluster_corpus, label_task

    def build(seed, dimension=2000, n_queries=64):
        flat, labels = cluster_corpus(seed, n_items=512, n_clusters=8, dimension=dimension)
        items = {i: LabeledItem(i, frozenset({int(label)})) for i, label in enumerate(labels)}
        db_ids = list(range(n_queries, 512))
        return label_task(
            db_ids, flat[n_queries:], flat[:n_queries], {i: items[i] for i in db_ids},
            [items[i] for i in range(n_queries)],
        )

    return build


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory, small_config):
    """Output directory after a complete synth-to-eval run; tests must not modify it."""
    from hyperhash.pipeline import run_pipeline

    directory = tmp_path_factory.mktemp("pipeline")
    run_pipeline(small_config, str(directory))
    return directory
