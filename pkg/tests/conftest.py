import time

import numpy as np
import pytest

from dvfa.autodiff import Tensor
from dvfa.model import Predictions
from dvfa.synth import CorpusConfig, gen_corpus, load_corpus
from dvfa.trainer import TrainConfig, evaluate_model, load_model, train

DESK = dict(epochs=30)


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny_corpus")
    gen_corpus(CorpusConfig(n_train=48, n_val=8, n_test=16), 0, path)
    return path


@pytest.fixture(scope="session")
def tiny_corpus(tiny_corpus_dir):
    return load_corpus(tiny_corpus_dir)


@pytest.fixture(scope="session")
def desk_corpus_dir(tmp_path_factory):
    """The default corpus: vocab 30, 3-8 words, 16-dim features, 2000 train / 200 test, noise 0.3."""
    path = tmp_path_factory.mktemp("desk_corpus")
    gen_corpus(CorpusConfig(), 0, path)
    return path


@pytest.fixture(scope="session")
def desk_run(desk_corpus_dir, tmp_path_factory):
    """A DVFA model trained with the desk defaults, plus its clean and anomaly test reports."""
    out = tmp_path_factory.mktemp("desk_dvfa")
    start = time.perf_counter()
    train(TrainConfig(**DESK), desk_corpus_dir, out)
    elapsed = time.perf_counter() - start
    model, task, _ = load_model(out / "best.npz")
    corpus = load_corpus(desk_corpus_dir)
    test = corpus.split("test")
    return dict(model=model, task=task, corpus=corpus, test=test, seconds=elapsed, checkpoint=out / "best.npz",
                clean=evaluate_model(model, task, test, "clean"),
                anomaly=evaluate_model(model, task, test, "anomaly"))


class OracleModel:
    """Stand-in model that returns the batch's own targets as one-hot predictions.

    With ``blind=True`` it never reports an anomaly: deletion frames become
    silence and every word is predicted present.
    """

    dtype = np.float64

    def __init__(self, config, blind: bool = False):
        self.config = config
        self.blind = blind

    def eval(self):
        return self

    def __call__(self, batch):
        labels = batch.frame_labels.copy()
        presence = batch.presence.copy()
        if self.blind:
            labels[labels == self.config.deletion_class] = 0
            presence[:] = 1.0
        lp = np.full(labels.shape + (self.config.n_classes,), -30.0)
        np.put_along_axis(lp, labels[..., None], 0.0, axis=-1)
        return Predictions(Tensor(lp), Tensor(np.clip(presence, 0.01, 0.99)))
