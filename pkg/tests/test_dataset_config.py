import numpy as np
import pytest

from radcopula.config import PipelineConfig, load_config, parse_config_text
from radcopula.dataset import LabeledDataset, read_feature_csv, write_dataset_csv, write_feature_csv
from radcopula.errors import DataError


def test_csv_round_trip_with_missing(tmp_path):
    X = np.array([[1.5, np.nan], [0.1, 2.0]])
    d = LabeledDataset(["a", "b"], X, ["z_feat", "a_feat"], [1, 0], [10.0, 20.5], [1, 0])
    path = tmp_path / "f.csv"
    write_dataset_csv(path, d)
    head = path.read_text().splitlines()
    assert head[0] == "patient_id,label,time_days,censor,a_feat,z_feat"
    assert head[1].endswith(",NA,1.5")
    back = read_feature_csv(path, require=("label", "time_days", "censor"))
    assert back.feature_names == ["a_feat", "z_feat"]
    np.testing.assert_array_equal(back.column("z_feat"), X[:, 0])
    assert np.isnan(back.column("a_feat")[0])
    assert back.labels.tolist() == [1, 0] and back.censor.tolist() == [1, 0]


@pytest.mark.parametrize("row,match", [
    ("p1,1,10,2,0.5", "censor"),
    ("p1,3,10,1,0.5", "label"),
    ("p1,1,-4,1,0.5", "time_days"),
    ("p1,1,10,1,abc", "non-numeric"),
    ("p1,,10,1,0.5", "'label' is empty"),
])
def test_csv_rejects_bad_rows(tmp_path, row, match):
    path = tmp_path / "f.csv"
    path.write_text("patient_id,label,time_days,censor,f\n" + row + "\n")
    with pytest.raises(DataError, match=match):
        read_feature_csv(path)


def test_csv_missing_column_named(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("patient_id,time_days,censor,f\np1,10,1,0.5\n")
    with pytest.raises(DataError, match="'label'"):
        read_feature_csv(path)


def test_dataset_validation():
    with pytest.raises(DataError, match="duplicate"):
        LabeledDataset(["a"], [[1, 2]], ["f", "f"])
    with pytest.raises(DataError, match="binary"):
        LabeledDataset(["a"], [[1]], ["f"], [2])


def test_feature_rows_sorted_and_na(tmp_path):
    path = tmp_path / "f.csv"
    write_feature_csv(path, [{"patient_id": "p", "label": 0, "features": {"b": None, "a": 1.0}}])
    assert path.read_text() == "patient_id,label,time_days,censor,a,b\np,0,,,1.0,NA\n"


def test_config_text_format(tmp_path):
    cfg = parse_config_text("# comment\nmodel = NFRF\niterations = 3\nalpha_grid = 0, 2, 18\nsampler = smote\n")
    assert cfg.model == "nfrf" and cfg.iterations == 3 and cfg.alpha_grid == (0.0, 2.0, 18.0)
    assert cfg.threshold == 0.80
    assert PipelineConfig().threshold == 0.85
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_text("iterationz = 3\n")
    with pytest.raises(ValueError, match="cannot parse"):
        parse_config_text("folds = many\n")
    p = tmp_path / "c.ini"
    p.write_text("folds = 1\n")
    with pytest.raises(ValueError, match="folds"):
        load_config(p)
    with pytest.raises(DataError):
        load_config(tmp_path / "missing.ini")


def test_config_validation_and_digest(tmp_path):
    with pytest.raises(ValueError, match="threshold_mrf"):
        PipelineConfig(threshold_mrf=0.0).validate()
    with pytest.raises(DataError, match="volume_dir"):
        PipelineConfig().validate(check_paths=True)
    a, b = PipelineConfig(), PipelineConfig(volume_dir=str(tmp_path))
    assert a.digest() == b.digest()
    assert a.digest() != PipelineConfig(iterations=3).digest()
