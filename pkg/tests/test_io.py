import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inclass.costs import MovingEstimates
from inclass.exceptions import CheckpointError, ConfigError, IngestionError
from inclass.io import (Checkpoint, RunConfig, RunManifest, checkpoint_from_text,
                        checkpoint_to_text, dataset_to_csv, load_checkpoint, load_config,
                        parse_header, read_dataset, save_checkpoint, write_dataset)
from inclass.nn import AdamState
from inclass.synthetic import sample_mixture, two_gaussian_spec
from inclass.trainer import Dataset, TrainConfig, build_inclass_net, train


def _same(a, b):
    assert len(a.variates) == len(b.variates)
    for x, y in zip(a.variates, b.variates):
        assert x.shape == y.shape and x.tobytes() == y.tobytes()
    if a.labels is None:
        assert b.labels is None
    else:
        assert np.array_equal(a.labels, b.labels)


def test_two_gaussian_csv_layout(tmp_path):
    data = sample_mixture(two_gaussian_spec(), 1000, seed=7).data
    path = tmp_path / "d.csv"
    write_dataset(data, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").split("\n")
    assert lines[0] == "x0|y0,label"
    assert len(lines) == 1002 and lines[-1] == ""
    assert all(len(ln.split(",")) == 3 for ln in lines[1:-1])


@pytest.mark.parametrize("suffix", ["csv", "jsonl"])
def test_round_trip_multidimensional(tmp_path, rng, suffix):
    data = Dataset([rng.normal(size=(20, 3)), rng.normal(size=(20, 1)) * 1e-300],
                   labels=rng.integers(0, 4, 20))
    path = tmp_path / f"d.{suffix}"
    write_dataset(data, path)
    _same(data, read_dataset(path))
    _same(data, read_dataset(path, expected_dims=(3, 1)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_csv_round_trip_is_bitwise(tmp_path_factory, table):
    data = Dataset([table[:, :1], table[:, 1:]])
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(data, path)
    _same(data, read_dataset(path))


def test_unlabeled_header():
    data = Dataset([np.zeros((1, 2)), np.zeros((1, 1))])
    assert dataset_to_csv(data).splitlines()[0] == "x0,x1|y0"
    assert parse_header("a,b|c,label\n") == ([["a", "b"], ["c"]], True)
    with pytest.raises(IngestionError):
        parse_header("a||b")


@pytest.mark.parametrize("cell", ["nan", "inf", "-inf"])
def test_non_finite_rejected_with_coordinates(tmp_path, cell):
    path = tmp_path / "d.csv"
    path.write_text(f"x0|y0,label\n1.0,2.0,0\n3.0,{cell},1\n")
    with pytest.raises(IngestionError, match=r"row 2, column 2 \('y0'\)"):
        read_dataset(path)


def test_jsonl_non_finite_rejected(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"dims": [1, 1], "labeled": false}\n{"variates": [[1.0], [NaN]]}\n')
    with pytest.raises(IngestionError, match="row 1, variate 1"):
        read_dataset(path)


def test_dims_mismatch_names_columns(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x0,x1|y0\n1,2,3\n")
    with pytest.raises(IngestionError, match=r"\['x0', 'x1'\].*\(1, 1\)"):
        read_dataset(path, expected_dims=(1, 1))


def test_ingestion_errors(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x0|y0\n1,2,3\n")
    with pytest.raises(IngestionError, match="3 cells"):
        read_dataset(path)
    path.write_text("x0|y0\n1,abc\n")
    with pytest.raises(IngestionError, match="'abc'.*column 2"):
        read_dataset(path)
    path.write_text("x0|y0,label\n1,2,0.5\n")
    with pytest.raises(IngestionError, match="label"):
        read_dataset(path)
    path.write_text("")
    with pytest.raises(IngestionError):
        read_dataset(path)


# ---------------------------------------------------------------------------
# checkpoints


@pytest.fixture(scope="module")
def trained():
    data = sample_mixture(two_gaussian_spec(), 2000, seed=1).data
    net = build_inclass_net((1, 1), (8, 8), 2, seed=3)
    result = train(net, data, TrainConfig(epochs=2, gradient_mode="moving", batch_size=50))
    return Checkpoint(result.net, result.optimizer, 2, result.estimates), data


def test_checkpoint_round_trip_bitwise(tmp_path, trained):
    ckpt, data = trained
    path = tmp_path / "c.txt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.net.params.tobytes() == ckpt.net.params.tobytes()
    assert back.optimizer.first_moment.tobytes() == ckpt.optimizer.first_moment.tobytes()
    assert back.optimizer.second_moment.tobytes() == ckpt.optimizer.second_moment.tobytes()
    assert back.optimizer.step_count == ckpt.optimizer.step_count
    assert back.estimates.phi_hat.tobytes() == ckpt.estimates.phi_hat.tobytes()
    assert back.estimates.aux.tobytes() == ckpt.estimates.aux.tobytes()
    assert back.epochs_done == 2
    assert checkpoint_to_text(back) == path.read_text()
    for a, b in zip(back.net.forward(data.variates), ckpt.net.forward(data.variates)):
        assert a.tobytes() == b.tobytes()


def test_shared_net_checkpoint():
    net = build_inclass_net((2, 2), (4,), 3, sharing=(0, 0), seed=0)
    ckpt = Checkpoint(net, AdamState(net.n_params))
    back = checkpoint_from_text(checkpoint_to_text(ckpt))
    assert back.net.sharing == net.sharing and len(back.net.nets) == 1
    assert back.estimates is None


@pytest.mark.parametrize("key,bad,field", [
    ("n_params", "n_params 12", "n_params"),
    ("adam_lr", "adam_lr fast", "adam_lr"),
    ("widths 0", "widths 0 1 8 two", "widths_0"),
    ("moving_shape", "moving_shape 2", "moving_shape"),
])
def test_corrupted_header_names_field(trained, key, bad, field):
    text = checkpoint_to_text(trained[0])
    lines = [bad if ln.startswith(key + " ") else ln for ln in text.split("\n")]
    with pytest.raises(CheckpointError) as err:
        checkpoint_from_text("\n".join(lines))
    assert err.value.field == field
    assert field.split("_")[0] in str(err.value)


def test_corrupted_blocks(trained):
    text = checkpoint_to_text(trained[0])
    with pytest.raises(CheckpointError) as err:
        checkpoint_from_text(text.replace("[adam_v]", "[adam_w]"))
    assert err.value.field == "adam_v"
    lines = text.split("\n")
    k = lines.index("[params]") + 1
    lines[k] = "0.1.2"
    with pytest.raises(CheckpointError, match=r"\[params\]"):
        checkpoint_from_text("\n".join(lines))
    with pytest.raises(CheckpointError) as err:
        checkpoint_from_text("hello\n")
    assert err.value.field == "magic"
    with pytest.raises(CheckpointError) as err:
        checkpoint_from_text(text.replace("inclass-checkpoint 1", "inclass-checkpoint 9"))
    assert err.value.field == "version"


def test_missing_entry(trained):
    text = checkpoint_to_text(trained[0])
    text = "\n".join(ln for ln in text.split("\n") if not ln.startswith("epochs_done"))
    with pytest.raises(CheckpointError, match="epochs_done"):
        checkpoint_from_text(text)


def test_moving_estimates_checkpoint_values():
    net = build_inclass_net((1, 1), (4,), 2, seed=0)
    est = MovingEstimates.uniform(2, 2)
    back = checkpoint_from_text(checkpoint_to_text(Checkpoint(net, AdamState(net.n_params),
                                                              estimates=est)))
    np.testing.assert_array_equal(back.estimates.phi_hat, 0.5)
    assert back.estimates.decay == 0.5


# ---------------------------------------------------------------------------
# run configuration


def test_run_config_round_trip():
    cfg = RunConfig.from_dict({"seed": 4, "train": {"epochs": 3, "cost": "neg_cmi"},
                               "net": {"hidden": [4], "sharing": [0, 0]},
                               "generate": {"spec": {"weights": [1.0], "components": [
                                   [{"kind": "normal", "mean": 0.0, "sd": 1.0}]]}}})
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.hash() == cfg.hash()
    assert json.loads(cfg.to_json())["train"]["decay"] == 0.5


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="train.*epoch"):
        RunConfig.from_dict({"train": {"epoch": 3}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"version": 2})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seed": "7"})
    with pytest.raises(ConfigError):
        RunConfig.from_json("{not json")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_manifest_lists_outputs(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("abc")
    m = RunManifest("generate", "h", "d", "0", 1.5)
    m.add_output(p)
    got = json.loads(m.to_json())
    assert got["outputs"] == [{"path": "a.txt", "sha256":
                               "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"}]
