"""JSON documents for measurement objects, conservation reports and certificates.

Three schemas:

* ``qmeas/1``: PovmDensity, KrausInstrument, Distribution.  Complex numbers
  are ``[re, im]``, matrices are nested row-major lists, grid labels are
  written verbatim (complex labels as ``[re, im]``).  Floats keep full
  ``repr`` precision so documents round-trip exactly.
* ``qmeas-report/1``: conservation and Shannon results; floats rounded to 12
  significant digits.
* ``qmeas-cert/1``: classicality certificates with every residual and the
  tolerances used.

Non-finite floats are encoded as ``null`` (NaN, i.e. the unassigned
statistic) and ``"inf"`` / ``"-inf"``.  :func:`dumps` sorts keys, so equal
inputs produce byte-identical text.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .classicality import ClassicalityCertificate
from .entropy import ConservationReport, ShannonBalance
from .measurement import Distribution, KrausInstrument, OutcomeGrid, PovmDensity

SCHEMA = "qmeas/1"
REPORT_SCHEMA = "qmeas-report/1"
CERT_SCHEMA = "qmeas-cert/1"
REPORT_DIGITS = 12


class SchemaError(ValueError):
    pass


def _float(x, digits: int | None = None):
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if digits is None:
        return x
    return float(f"{x:.{digits}g}")


def _unfloat(v) -> float:
    if v is None:
        return float("nan")
    if isinstance(v, str):
        return float(v)
    return float(v)


def _complex(z, digits=None):
    return [_float(z.real, digits), _float(z.imag, digits)]


def encode_array(a, digits: int | None = None):
    """Nested lists; complex entries become [re, im] pairs."""
    a = np.asarray(a)
    if np.iscomplexobj(a):
        flat = [_complex(z, digits) for z in a.ravel()]
    elif a.dtype.kind in "iub":
        flat = [int(v) for v in a.ravel()]
    else:
        flat = [_float(v, digits) for v in a.ravel()]
    if a.ndim == 0:
        return flat[0]
    arr = np.empty(len(flat), dtype=object)
    arr[:] = flat
    return arr.reshape(a.shape).tolist()


def _label(v):
    if isinstance(v, (complex, np.complexfloating)):
        return _complex(complex(v))
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return _float(v)
    return str(v)


# -- qmeas/1 ---------------------------------------------------------------

def grid_to_dict(grid: OutcomeGrid) -> dict:
    return {
        "kind": grid.kind,
        "labels": [_label(v) for v in grid.labels.tolist()] if grid.labels.dtype.kind != "c"
        else [_complex(z) for z in grid.labels],
        "weights": encode_array(grid.weights),
    }


def grid_from_dict(d: dict) -> OutcomeGrid:
    kind = d["kind"]
    labels = d["labels"]
    if kind == "continuous-2d":
        labels = np.array([complex(_unfloat(a), _unfloat(b)) for a, b in labels])
    else:
        labels = np.asarray(labels)
    return OutcomeGrid(labels, np.asarray(d["weights"], float), kind)


def _check(d: dict, type_: str, schema: str = SCHEMA) -> None:
    if d.get("schema") != schema:
        raise SchemaError(f"expected schema {schema!r}, got {d.get('schema')!r}")
    if d.get("type") != type_:
        raise SchemaError(f"expected a {type_} document, got {d.get('type')!r}")


def povm_to_dict(povm: PovmDensity) -> dict:
    return {
        "schema": SCHEMA,
        "type": "povm",
        "name": povm.name,
        "grid": grid_to_dict(povm.grid),
        "diagonal": bool(povm.diagonal),
        "effects": encode_array(np.asarray(povm.effects, dtype=complex)),
    }


def povm_from_dict(d: dict) -> PovmDensity:
    _check(d, "povm")
    eff = _decode_complex(d["effects"])
    return PovmDensity(grid_from_dict(d["grid"]), eff, diagonal=d["diagonal"], name=d.get("name", ""))


def instrument_to_dict(inst: KrausInstrument) -> dict:
    return {
        "schema": SCHEMA,
        "type": "instrument",
        "name": inst.name,
        "grid": grid_to_dict(inst.grid),
        "kraus": encode_array(inst.kraus),
    }


def instrument_from_dict(d: dict) -> KrausInstrument:
    _check(d, "instrument")
    return KrausInstrument(grid_from_dict(d["grid"]), _decode_complex(d["kraus"]), name=d.get("name", ""))


def distribution_to_dict(dist: Distribution) -> dict:
    return {
        "schema": SCHEMA,
        "type": "distribution",
        "grid": grid_to_dict(dist.grid),
        "density": encode_array(dist.density),
    }


def distribution_from_dict(d: dict) -> Distribution:
    _check(d, "distribution")
    return Distribution(grid_from_dict(d["grid"]), np.array([_unfloat(v) for v in d["density"]]))


def _decode_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=object)
    # trailing axis of length 2 holds [re, im]
    re = np.vectorize(_unfloat, otypes=[float])(arr[..., 0])
    im = np.vectorize(_unfloat, otypes=[float])(arr[..., 1])
    return re + 1j * im


def to_document(obj) -> dict:
    if isinstance(obj, PovmDensity):
        return povm_to_dict(obj)
    if isinstance(obj, KrausInstrument):
        return instrument_to_dict(obj)
    if isinstance(obj, Distribution):
        return distribution_to_dict(obj)
    raise TypeError(f"no qmeas/1 encoding for {type(obj).__name__}")


def from_document(d: dict):
    loaders = {"povm": povm_from_dict, "instrument": instrument_from_dict, "distribution": distribution_from_dict}
    if d.get("type") not in loaders:
        raise SchemaError(f"unknown document type {d.get('type')!r}")
    return loaders[d["type"]](d)


# -- reports -----------------------------------------------------------------

def _clean(obj, digits):
    """Recursively convert numpy scalars and floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, digits) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _float(obj, digits)
    if isinstance(obj, (complex, np.complexfloating)):
        return _complex(complex(obj), digits)
    if isinstance(obj, np.ndarray):
        return encode_array(obj, digits)
    return obj


def report_to_dict(report: ConservationReport, balance: ShannonBalance | None = None, meta: dict | None = None,
                   per_outcome: bool = False) -> dict:
    body = {
        "schema": REPORT_SCHEMA,
        "conservation": report.as_dict(),
        "tolerances": dict(report.tolerances),
        "meta": dict(meta or {}),
    }
    if balance is not None:
        body["shannon"] = {
            "mutual_info_nats": balance.mutual_info,
            "entropy_drop_nats": balance.entropy_drop,
            "deficit_nats": balance.deficit,
        }
    if per_outcome:
        body["per_outcome"] = [list(row) for row in report.per_outcome]
    return _clean(body, REPORT_DIGITS)


OUTCOME_COLUMNS = ("y_label", "p_y_rho", "d_post_nats")


def outcome_rows(report: ConservationReport):
    for label, p, d in report.per_outcome:
        yield (_csv_value(label), _csv_value(p), _csv_value(d))


def _csv_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (complex, np.complexfloating)):
        return f"{_csv_value(v.real)}{'+' if v.imag >= 0 else '-'}{_csv_value(abs(v.imag))}j"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.{REPORT_DIGITS}g}"
    return str(v)


def report_csv(report: ConservationReport) -> str:
    """Per-outcome table as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OUTCOME_COLUMNS)
    w.writerows(outcome_rows(report))
    return buf.getvalue()


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_csv_value(v) for v in row])
    return buf.getvalue()


def cert_to_dict(cert: ClassicalityCertificate, meta: dict | None = None, tables: bool = False,
                 all_outcomes: bool = True) -> dict:
    """Certificate document; the normalization defect is only meaningful when every outcome was kept."""
    body = {
        "schema": CERT_SCHEMA,
        "mode": cert.mode,
        "residuals": {
            "sufficient": cert.residual_sufficient,
            "sufficient_max_pair": float(np.max(cert.pair_residuals, initial=0.0)),
            "coarse_graining": cert.residual_coarse,
            "pushforward": cert.residual_pushforward,
            "ban_deviation": cert.ban_deviation,
            "normalization": cert.normalization_defect() if all_outcomes else float("nan"),
        },
        "ban_satisfied": cert.ban_satisfied,
        "sufficient_ok": cert.sufficient_ok,
        "coarse_ok": cert.coarse_ok,
        "tolerances": dict(cert.tolerances),
        "n_x_in": len(cert.x_in_grid),
        "n_x_out": len(cert.x_out_grid),
        "n_y": int(len(cert.y_labels)),
        "meta": dict(meta or {}),
    }
    if tables:
        body["y_labels"] = [_label(v) for v in cert.y_labels.tolist()]
        body["q"] = cert.q
        body["x_tilde"] = cert.x_tilde
        if cert.p_y_given_x is not None:
            body["p_y_given_x"] = cert.p_y_given_x
    return _clean(body, REPORT_DIGITS)


def unavailable_cert(reason: str, ban: bool | None, meta: dict | None = None) -> dict:
    """Placeholder certificate for routes without an operator-level instrument."""
    return _clean({
        "schema": CERT_SCHEMA,
        "mode": "unavailable",
        "reason": reason,
        "ban_satisfied": ban,
        "residuals": {},
        "tolerances": {},
        "meta": dict(meta or {}),
    }, REPORT_DIGITS)


def dumps(doc) -> str:
    """Deterministic JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(_clean(doc, None), sort_keys=True, indent=2, allow_nan=False) + "\n"


def loads(text: str):
    return json.loads(text)
