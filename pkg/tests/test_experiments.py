import numpy as np
import pytest

from fade import experiments as ex
from fade.errors import BadSize, UnknownKind
from fade.tensor_core import maxpool_x2


def test_dataset_deterministic():
    a, b = ex.make_toy_dataset(7), ex.make_toy_dataset(7)
    assert np.array_equal(a.train.image, b.train.image) and np.array_equal(a.test.image, b.test.image)
    assert not np.array_equal(a.train.image, ex.make_toy_dataset(8).train.image)


def test_dataset_binary_and_pooled():
    ds = ex.make_toy_dataset(3, n_train=10, n_test=10, size=16)
    for inst in (ds.train, ds.test):
        assert inst.image.shape == (10, 1, 16, 16)
        assert set(np.unique(inst.image)) <= {0.0, 1.0}
        assert np.array_equal(inst.enc, inst.image)
        assert np.array_equal(inst.dec, maxpool_x2(inst.image))
    assert not np.array_equal(ds.train.image[:5], ds.test.image[:5])


def test_bad_size():
    with pytest.raises(BadSize):
        ex.make_toy_dataset(1, size=15)


def test_period_two_stripes_pool_to_ones():
    inst = ex.period2_stripes()
    assert np.all(inst.dec == 1.0)
    assert inst.image.mean() == 0.5


def test_bilinear_floor_on_period_two():
    inst = ex.period2_stripes()
    assert ex.evaluate("bilinear", {}, inst) == pytest.approx(0.5)
    assert ex.evaluate("bilinear", {}, inst) >= 0.2


def test_zero_epochs_is_untrained_evaluation():
    data = ex.make_toy_dataset(42)
    rep = ex.train_toy("fade_full", epochs=0, data=data)
    params = ex.init_params("fade_full", 42)
    assert rep.epoch_mse == []
    assert rep.final_test_mse == ex.evaluate("fade_full", params, data.test)
    assert rep.final_train_mse == ex.evaluate("fade_full", params, data.train)


@pytest.mark.parametrize("kind", ex.TOY_KINDS)
def test_training_reduces_loss(kind):
    rep = ex.train_toy(kind, epochs=20)
    assert len(rep.epoch_mse) == 20
    if kind == "bilinear":
        assert len(set(rep.epoch_mse)) == 1
    else:
        assert rep.final_train_mse < rep.epoch_mse[0]


def test_rerun_identical_csv():
    a = ex.ablation_csv([ex.train_toy("fade_full", epochs=15), ex.train_toy("carafe", epochs=15)])
    b = ex.ablation_csv([ex.train_toy("fade_full", epochs=15), ex.train_toy("carafe", epochs=15)])
    assert a == b
    assert a.splitlines()[0] == ",".join(ex.ABLATION_HEADER)


def test_encoder_path_beats_decoder_only():
    data = ex.make_toy_dataset(42)
    full = ex.train_toy("fade_full", data=data)
    carafe = ex.train_toy("carafe", data=data)
    assert full.final_test_mse < carafe.final_test_mse


def test_errors():
    with pytest.raises(UnknownKind):
        ex.train_toy("nearest", epochs=1)
    with pytest.raises(ValueError):
        ex.train_toy("carafe", epochs=-1)
    with pytest.raises(ValueError):
        ex.ablation_suite(budget=10)
