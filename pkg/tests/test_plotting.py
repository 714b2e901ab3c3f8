from surfparc.plotting import dsc_boxplot, metric_scatter


def test_files_written(tmp_path):
    a = dsc_boxplot({"inner": [0.9, 0.95], "central": [0.97, 1.0], "outer": []}, tmp_path / "b.png")
    b = metric_scatter([], [], tmp_path / "s.png", "area", "mm^2")
    for p in (a, b):
        assert p.read_bytes()[:4] == b"\x89PNG"


def test_repeatable_bytes(tmp_path):
    dsc_boxplot({"central": [0.5, 0.7]}, tmp_path / "1.png")
    dsc_boxplot({"central": [0.5, 0.7]}, tmp_path / "2.png")
    assert (tmp_path / "1.png").read_bytes() == (tmp_path / "2.png").read_bytes()
