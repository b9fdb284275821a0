import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dvfa import schemas
from dvfa.estimators import CTCAligner, DVFAligner, check_features, check_transcript, check_utterances


def test_input_checks():
    assert check_features([[0.0, 1.0]]).dtype == np.float32
    with pytest.raises(ValueError):
        check_features(np.zeros((3, 4)), d_in=5)
    with pytest.raises(ValueError):
        check_features([[np.nan, 1.0]])
    assert check_transcript("hello world") == ["HELLO", "WORLD"]
    with pytest.raises(ValueError):
        check_transcript(" ")
    with pytest.raises(ValueError):
        check_utterances([])
    with pytest.raises(TypeError):
        check_utterances([np.zeros(3)])


def test_params_and_clone():
    est = DVFAligner(epochs=3, lr=5e-4)
    assert est.get_params()["epochs"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    with pytest.raises(NotFittedError):
        est.predict([(np.zeros((4, 2)), "A")])


@pytest.mark.parametrize("cls", [DVFAligner, CTCAligner])
def test_fit_predict_score(cls, tiny_corpus):
    est = cls(epochs=1, batch_size=8)
    with pytest.raises(ValueError):
        est.fit(tiny_corpus.split("train"))
    est.fit(tiny_corpus.split("train"), lexicon=tiny_corpus.lexicon)
    utt = tiny_corpus.split("test")[0]
    (doc,) = est.predict([(utt.features, " ".join(utt.words))])
    schemas.validate(doc, "alignment")
    assert [w["text"] for w in doc["words"]] == utt.words
    assert 0.0 <= est.score(tiny_corpus.split("test")) <= 1.0
