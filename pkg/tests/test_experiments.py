import json
from importlib import resources

import jsonschema
import pytest

from rcoda.experiments import ExperimentSpec, derive_seed, list_presets, run_experiment

SMALL = {
    "kind": "rmse",
    "sizes": [12],
    "q": [2],
    "betas": [0.3],
    "backends": ["rcoda", "pl"],
    "replicates": 3,
    "sweeps": 100,
    "mcmc": {"iterations": 300, "burn_in": 100},
}


def _schema():
    return json.loads(resources.files("rcoda.schema").joinpath("experiment.schema.json").read_text())


def test_presets_validate_against_schema():
    schema = _schema()
    names = list_presets()
    assert {"rmse_desk", "coverage_desk", "decay_desk", "second_order_desk", "bonds_desk"} <= set(names)
    for name in names:
        data = json.loads(resources.files("rcoda.presets").joinpath(f"{name}.json").read_text())
        jsonschema.validate(data, schema)
        ExperimentSpec.from_dict(data)


def test_spec_roundtrip_validates():
    spec = ExperimentSpec.from_dict(SMALL)
    jsonschema.validate({k: v for k, v in spec.to_dict().items()}, _schema())


def test_spec_rejects_unknown_and_bad_values():
    with pytest.raises(ValueError, match="unknown"):
        ExperimentSpec.from_dict({**SMALL, "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({**SMALL, "betas": [1.5]})
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({**SMALL, "kind": "nope"})
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({**SMALL, "kind": "decay", "order": "second"})


def test_derive_seed_stable_and_distinct():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(1, 1, r) for r in range(100)}) == 100
    assert derive_seed(1, 2, 3) != derive_seed(2, 2, 3)


def test_rmse_report_shape():
    rep = run_experiment(ExperimentSpec.from_dict(SMALL))
    cell = rep.cell("rmse", backend="rcoda", beta=0.3)
    assert cell["n_effective"] == 3 and cell["n_failed"] == 0
    assert len(rep.replicates) == 6
    assert rep.cells_csv().splitlines()[0] == ",".join(rep.CELL_COLUMNS)


@pytest.mark.parametrize("kind,extra", [
    ("rmse", {}),
    ("coverage", {"betas": [0.1, 0.3]}),
    ("decay", {"sizes": [32], "backends": ["rcoda"], "replicates": 2, "min_sublattice_sites": 16, "max_level": 3}),
    ("bonds", {"sizes": [8], "beta_grid": [0.0, 0.2, 0.4], "bonds_sweeps": 100, "bonds_burn_in": 20}),
])
def test_worker_count_does_not_change_output(kind, extra, tmp_path):
    spec = ExperimentSpec.from_dict({**SMALL, "kind": kind, **extra})
    a = run_experiment(spec, workers=1).write(tmp_path / "a")
    b = run_experiment(spec, workers=2).write(tmp_path / "b")
    for key in ("report_csv", "replicates_csv"):
        assert a[key].read_bytes() == b[key].read_bytes()


def test_failed_replicates_are_counted():
    spec = ExperimentSpec.from_dict({**SMALL, "backends": ["exact"], "sizes": [14]})
    rep = run_experiment(spec)
    cell = rep.cell("rmse", backend="exact")
    assert cell["n_failed"] == 3 and cell["n_effective"] == 0
    assert all("CapacityError" in r["error"] for r in rep.replicates)
