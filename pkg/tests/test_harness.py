import numpy as np
import pytest

from htnet.cli import main
from htnet.examples import UnknownExample, example_names, load_example
from htnet.harness import ConfigInvalid, ExperimentConfig, estimate_network_cost, run_convergence, tracking_params
from htnet.model import validate_spec
from htnet.planning import analyze, job_shop_routing
from htnet.specfile import SpecError, SpecFile, dump_spec, parse_rule, parse_spec

SMALL = dict(example="single", r_list=(2, 4), reps=6, seeds=2, bcp_reps=50, bcp_dt=0.01, horizon=1.0)


@pytest.mark.parametrize("name", example_names())
def test_examples_load(name):
    m = load_example(name)
    assert validate_spec(m.spec) == []
    assert analyze(m).heavy_traffic


def test_unknown_example():
    with pytest.raises(UnknownExample):
        load_example("nope")


def test_jobshop_routing_structure():
    Pt = job_shop_routing(load_example("jobshop_fig3").spec)
    assert np.allclose(Pt, [[0, 1, 0], [0, 0, 1], [0.2, 0.1, 0]])
    assert job_shop_routing(load_example("n_network").spec) is not None


@pytest.mark.parametrize("name", example_names())
def test_specfile_round_trip(name):
    sf = SpecFile(load_example(name))
    back = parse_spec(dump_spec(sf))
    a, b = sf.model, back.model
    for attr in ("C", "A", "routing"):
        assert np.array_equal(getattr(a.spec, attr), getattr(b.spec, attr))
    assert a.spec.arrival_classes == b.spec.arrival_classes
    for attr in ("alpha", "beta", "theta1", "theta2", "q", "sigma_u", "sigma_v"):
        assert np.array_equal(getattr(a.scaling, attr), getattr(b.scaling, attr))
    assert dump_spec(parse_spec(dump_spec(back))) == dump_spec(back)
    assert np.allclose(analyze(a).D, analyze(b).D)


def test_specfile_errors():
    text = dump_spec(SpecFile(load_example("tandem")))
    with pytest.raises(SpecError):
        parse_spec(text.replace("[routing]", "[routes]"))
    with pytest.raises(SpecError):
        parse_spec(text.replace("alpha = 1 0", "alpha = 1 0 3"))


def test_rule_files():
    name, rule = parse_rule("[rule]\ntype = threshold\nweights = 1 1\nthresholds = 2.0\noutcomes =\n  0 0\n  0.05 0.05\n")
    assert name == "threshold" and np.array_equal(rule.thresholds, [2.0])
    assert parse_rule("[rule]\n")[0] == "zero"
    with pytest.raises(SpecError):
        parse_rule("[rule]\ntype = fancy\nweights = 1\nthresholds = 1\noutcomes = 0\n")


@pytest.mark.parametrize("kw", [dict(r_list=()), dict(r_list=(5, 5)), dict(reps=0), dict(example=None),
                                dict(spec_path="x.ini"), dict(gamma=0.0)])
def test_config_invalid(kw):
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(**{**SMALL, **kw}).validate()


def test_digest_ignores_out_dir():
    a = ExperimentConfig(**SMALL, out_dir="a")
    b = ExperimentConfig(**SMALL, out_dir="b")
    assert a.digest() == b.digest() != ExperimentConfig(**{**SMALL, "seed": 1}).digest()


def test_convergence_csv_is_reproducible(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    reps = [run_convergence(ExperimentConfig(**SMALL), str(p)) for p in paths]
    assert paths[0].read_bytes() == paths[1].read_bytes()
    text = paths[0].read_text().splitlines()
    assert text[0].startswith("# htnet ") and text[1].startswith("# config_hash ")
    assert text[3] == "r,mean,se,reps,gap,median_gap,j_tilde,j_tilde_se"
    assert len(text) == 6 and reps[0].complete((2, 4))
    assert all(len(row.seed_means) == 2 for row in reps[0].rows)


def test_workers_do_not_change_estimate(single_plan):
    cfg = ExperimentConfig(**SMALL)
    params = tracking_params(cfg, single_plan)
    kw = dict(plan=single_plan, params=params, r=4, reps=8, seed=3, gamma=1.0, h=[1.0], horizon=0.5)
    a = estimate_network_cost(**kw, workers=1)
    b = estimate_network_cost(**kw, workers=2)
    assert a.mean == b.mean and a.se == b.se


def test_control_variate_is_unbiased_shift(single_plan):
    params = tracking_params(ExperimentConfig(**SMALL), single_plan)
    est = estimate_network_cost(single_plan, params, 4, 60, 0, 1.0, [1.0], horizon=1.0)
    raw = estimate_network_cost(single_plan, params, 4, 60, 0, 1.0, [1.0], horizon=1.0, control_variate=False)
    assert est.raw_mean == raw.mean and est.cv_coef is not None and raw.cv_coef is None
    assert est.se < est.raw_se
    assert abs(est.mean - raw.mean) < 4 * raw.se


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["examples"]) == 0
    assert main(["analyze", "--example", "tandem", "--out", str(tmp_path)]) == 0
    assert "[matrices]" in (tmp_path / "plan.txt").read_text()
    assert main(["simulate", "--example", "single", "--r", "4", "--horizon", "0.5", "--points", "10",
                 "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "trace_r4_seed0.csv").read_text().splitlines()
    assert lines[3] == "t,Q1,U1,W1" and len(lines) == 15
    assert main(["bcp-eval", "--example", "single", "--reps", "20", "--horizon", "1.0", "--dt", "0.01",
                 "--out", str(tmp_path)]) == 0
    assert main(["converge", "--example", "single", "--r-list", "", "--out", str(tmp_path)]) == 2
    assert main(["analyze", "--spec", str(tmp_path / "missing.ini")]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[topology]\nC = 1\n")
    assert main(["analyze", "--spec", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err
