import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmeas.classicality import certify
from qmeas.entropy import conservation_report
from qmeas.hilbert import HilbertSpec, random_density_matrix
from qmeas.measurement import Distribution, OutcomeGrid
from qmeas.models import photon_counting_model, two_level_model
from qmeas.serialize import (
    CERT_SCHEMA,
    SCHEMA,
    SchemaError,
    cert_to_dict,
    csv_text,
    dumps,
    from_document,
    loads,
    report_csv,
    report_to_dict,
    to_document,
)


def _roundtrip(obj):
    return from_document(loads(dumps(to_document(obj))))


def test_instrument_roundtrip_is_exact():
    inst = photon_counting_model(0.9, 1.0, HilbertSpec.fock(4), omega=0.3).inst
    back = _roundtrip(inst)
    np.testing.assert_array_equal(back.kraus, inst.kraus)
    assert back.grid.same_as(inst.grid)


def test_povm_and_grid_roundtrip():
    b = photon_counting_model(0.5, 1.0, HilbertSpec.fock(3))
    back = _roundtrip(b.povmX)
    np.testing.assert_array_equal(back.dense_effects(), b.povmX.dense_effects())
    grid = OutcomeGrid.uniform(-1.0, 1.0, 0.25)
    doc = to_document(Distribution(grid, np.linspace(0, 1, len(grid))))
    assert doc["schema"] == SCHEMA
    back = from_document(doc)
    np.testing.assert_array_equal(back.grid.weights, grid.weights)


@given(st.lists(st.floats(allow_nan=True, allow_infinity=True), min_size=1, max_size=6))
def test_distribution_values_survive_json(vals):
    grid = OutcomeGrid.discrete(len(vals))
    dist = Distribution(grid, np.array([abs(v) if not math.isnan(v) else 0.0 for v in vals]))
    back = _roundtrip(dist)
    np.testing.assert_array_equal(back.density, dist.density)


def test_wrong_schema_is_rejected():
    doc = to_document(Distribution(OutcomeGrid.discrete(2), [0.5, 0.5]))
    doc["schema"] = "qmeas/9"
    with pytest.raises(SchemaError):
        from_document(doc)


def test_dumps_is_canonical_and_strict_json():
    text = dumps({"b": 1.0, "a": [1, 2]})
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    json.loads(text)


def test_report_dict_embeds_tolerances_and_rounds():
    rng = np.random.default_rng(0)
    b = two_level_model(np.eye(2) / 2, np.eye(2) / 2)
    rep = conservation_report(random_density_matrix(2, rng), random_density_matrix(2, rng), b.inst, b.povmX)
    d = report_to_dict(rep)
    assert "tolerances" in d
    text = dumps(d)
    assert dumps(report_to_dict(rep)) == text
    assert "NaN" not in text
    lines = report_csv(rep).splitlines()
    assert lines[0] == "y_label,p_y_rho,d_post_nats"
    assert len(lines) == 3


def test_certificate_document():
    b = photon_counting_model(1.0, 1.0, HilbertSpec.fock(3))
    cert = certify(b.inst, b.povmX)
    d = cert_to_dict(cert, meta={"model": "pc"}, tables=True)
    assert d["schema"] == CERT_SCHEMA
    assert d["ban_satisfied"] is True
    assert d["residuals"]["sufficient"] < 1e-12
    assert "normalization" in d["residuals"]
    json.loads(dumps(d))


def test_csv_text_quotes_and_formats():
    text = csv_text(("a", "b"), [(0.1 + 0.2, "x,y"), (float("nan"), True)])
    rows = text.splitlines()
    assert rows[1] == '0.3,"x,y"'
    assert rows[0] == "a,b"
