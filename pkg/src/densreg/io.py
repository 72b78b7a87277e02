"""File formats and configuration handling for the batch front-end.

All tabular output is tab-separated text with a one-line header. Density
files are self-describing: the first line carries the reference measure
(interval, atoms, grid size), so a file can be read back without external
context. Floats are written with ``repr``, which round-trips exactly.

Run configurations are JSON with strict validation: unknown keys are
rejected and every diagnostic carries the path of the offending field.
"""
from __future__ import annotations

import json

import numpy as np

from .bayes import DensityElement
from .measure import ReferenceMeasure, make_discrete, make_mixed

__all__ = [
    "ConfigError",
    "DataError",
    "fmt",
    "write_table",
    "read_table",
    "measure_header",
    "parse_measure_header",
    "write_density_file",
    "read_density_file",
    "model_to_dict",
    "model_from_dict",
    "load_config",
    "validate_config",
]


class ConfigError(ValueError):
    """Invalid run configuration; carries the offending field path."""


class DataError(ValueError):
    """Malformed input data file."""


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_table(path, header: list, rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(fmt(v) for v in row) + "\n")


def read_table(path) -> tuple[list, list]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split("\t")
    rows = [ln.split("\t") for ln in lines[1:] if ln]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: line {i + 2} has {len(row)} fields, expected {len(header)}")
    return header, rows


# ---------------------------------------------------------------------------
# Density files
# ---------------------------------------------------------------------------

def measure_header(m: ReferenceMeasure) -> str:
    interval = "none" if m.interval is None else f"{fmt(m.interval[0])}:{fmt(m.interval[1])}"
    atoms = (
        ";".join(f"{fmt(l)}:{fmt(w)}" for l, w in zip(m.atom_locations, m.atom_weights))
        or "none"
    )
    return f"#measure\tinterval={interval}\tatoms={atoms}\tgrid={m.n_grid}"


def parse_measure_header(line: str) -> ReferenceMeasure:
    parts = line.split("\t")
    if not parts or parts[0] != "#measure":
        raise DataError("density file must start with a #measure header line")
    fields = {}
    for part in parts[1:]:
        if "=" not in part:
            raise DataError(f"malformed measure field {part!r}")
        key, val = part.split("=", 1)
        fields[key] = val
    try:
        atoms = []
        if fields.get("atoms", "none") != "none":
            for chunk in fields["atoms"].split(";"):
                loc, w = chunk.split(":")
                atoms.append((float(loc), float(w)))
        grid = int(fields.get("grid", "0"))
        if fields.get("interval", "none") == "none":
            if grid:
                raise DataError("a grid requires an interval")
            return make_discrete(atoms)
        a, b = fields["interval"].split(":")
        return make_mixed(float(a), float(b), atoms, grid)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed measure header: {exc}") from exc


def write_density_file(path, measure: ReferenceMeasure, key_columns, keys, densities):
    """One row per group: key values, then density values (atoms, then grid)."""
    cols = list(key_columns)
    cols += [f"atom:{fmt(l)}" for l in measure.atom_locations]
    cols += [f"g:{i}" for i in range(measure.n_grid)]
    with open(path, "w") as fh:
        fh.write(measure_header(measure) + "\n")
        fh.write("\t".join(cols) + "\n")
        for key, dens in zip(keys, densities):
            values = dens.values if isinstance(dens, DensityElement) else np.asarray(dens)
            fh.write(
                "\t".join(list(map(str, key)) + [fmt(v) for v in values]) + "\n"
            )


def read_density_file(path):
    """Returns (measure, key_columns, keys, densities)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if len(lines) < 2:
        raise DataError(f"{path}: missing header lines")
    measure = parse_measure_header(lines[0])
    header = lines[1].split("\t")
    n_values = measure.size
    if len(header) < n_values:
        raise DataError(f"{path}: header shorter than the measure layout")
    key_columns = header[: len(header) - n_values]
    keys, densities = [], []
    for i, ln in enumerate(lines[2:], start=3):
        if not ln:
            continue
        row = ln.split("\t")
        if len(row) != len(header):
            raise DataError(f"{path}: line {i} has {len(row)} fields, expected {len(header)}")
        keys.append(tuple(row[: len(key_columns)]))
        try:
            values = np.array([float(v) for v in row[len(key_columns):]])
        except ValueError as exc:
            raise DataError(f"{path}: line {i}: {exc}") from exc
        if np.any(values <= 0):
            raise DataError(f"{path}: line {i}: density values must be positive")
        densities.append(DensityElement(measure, values))
    return measure, key_columns, keys, densities


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _measure_dict(m: ReferenceMeasure) -> dict:
    return {
        "interval": None if m.interval is None else [m.interval[0], m.interval[1]],
        "atoms": [[float(l), float(w)] for l, w in zip(m.atom_locations, m.atom_weights)],
        "grid_size": int(m.n_grid),
    }


def _measure_from_dict(d: dict) -> ReferenceMeasure:
    atoms = [tuple(a) for a in d["atoms"]]
    if d["interval"] is None:
        return make_discrete(atoms)
    a, b = d["interval"]
    return make_mixed(a, b, atoms, d["grid_size"])


def model_to_dict(model) -> dict:
    """Serialize a fitted model with everything prediction needs."""
    from .model import FittedModel  # deferred to avoid a cycle

    assert isinstance(model, FittedModel)
    covariates = {}
    for name, cov in model.frame.covariates.items():
        if cov.kind == "categorical":
            covariates[name] = {
                "kind": "categorical",
                "levels": list(cov.levels),
                "reference": cov.reference,
            }
        else:
            covariates[name] = {
                "kind": "numeric",
                "lo": cov.lo,
                "hi": cov.hi,
                "reference": cov.reference,
            }
    terms = []
    for built in model.frame.built:
        t = built.term
        terms.append(
            {
                "name": t.name,
                "kind": t.kind,
                "covariates": list(t.covariates),
                "df": t.df,
                "knots": t.knots,
                "degree": t.degree,
                "penalty_order": t.penalty_order,
                "orthogonal_to": list(t.orthogonal_to),
                "transform": None if built.transform is None else built.transform.tolist(),
                "lambda_cov": built.lambda_cov,
                "achieved_df": built.achieved_df,
                "knot_vectors": {
                    k: v.tolist() for k, v in built.encoder.knot_vectors.items()
                },
            }
        )
    bases = {}
    for comp, basis in model.bases.items():
        bases[comp] = {
            "kind": basis.kind,
            "transform": basis.transform.tolist(),
            "measure": _measure_dict(basis.measure),
        }
    fits = {}
    for comp, state in model.component_states().items():
        fits[comp] = {
            "offset": state.offset_clr.tolist(),
            "coefficients": [c.tolist() for c in state.coefficients],
            "selections": list(map(int, state.selections)),
            "risk_path": state.risk_path.tolist(),
            "m_stop": int(state.m_stop),
            "stop_curve": None if state.stop_curve is None else state.stop_curve.tolist(),
        }
    return {
        "format": "densreg-model",
        "version": 1,
        "measure": _measure_dict(model.measure),
        "coding": model.spec.coding,
        "references": model.spec.references,
        "covariates": covariates,
        "terms": terms,
        "density_basis": {
            "knots": model.density_options.get("density_knots", 10),
            "degree": model.density_options.get("density_degree", 3),
            "penalty_order": model.density_options.get("density_penalty_order", 2),
            "lambda_density": model.lambda_density,
        },
        "bases": bases,
        "fits": fits,
    }


def model_from_dict(d: dict):
    """Rebuild a fitted model from its serialized form."""
    from .basis import DensityBasis, bspline_eval, bspline_knots
    from .boosting import FitState, MixedFit
    from .bayes import ClrElement, embed_clr_continuous, embed_clr_discrete
    from .model import (
        EffectTerm,
        FittedModel,
        ModelSpec,
        _BuiltTerm,
        _Covariate,
        _ModelFrame,
        _TermEncoder,
    )

    if d.get("format") != "densreg-model":
        raise DataError("not a model file")
    measure = _measure_from_dict(d["measure"])
    covariates = {}
    for name, cd in d["covariates"].items():
        cov = _Covariate.__new__(_Covariate)
        cov.name = name
        cov.kind = cd["kind"]
        if cd["kind"] == "categorical":
            cov.levels = tuple(cd["levels"])
            cov.reference = cd["reference"]
        else:
            cov.lo, cov.hi = cd["lo"], cd["hi"]
            cov.reference = cd["reference"]
        covariates[name] = cov

    terms = []
    built_terms = []
    for td in d["terms"]:
        term = EffectTerm(
            td["name"],
            td["kind"],
            tuple(td["covariates"]),
            td["df"],
            td["knots"],
            td["degree"],
            td["penalty_order"],
            tuple(td["orthogonal_to"]),
        )
        terms.append(term)
        encoder = _TermEncoder.__new__(_TermEncoder)
        encoder.term = term
        encoder.covariates = [covariates[c] for c in term.covariates]
        encoder.coding = d["coding"]
        encoder.full_rank = bool(term.orthogonal_to)
        encoder.knot_vectors = {
            k: np.asarray(v) for k, v in td["knot_vectors"].items()
        }
        transform = None if td["transform"] is None else np.asarray(td["transform"])
        built = _BuiltTerm(
            term=term,
            encoder=encoder,
            transform=transform,
            X=np.empty((0, 0)),
            penalty=np.empty((0, 0)),
            lambda_cov=td["lambda_cov"],
            target_df=td["df"],
            achieved_df=td["achieved_df"],
        )
        built_terms.append(built)

    spec = ModelSpec(tuple(terms), d["coding"], dict(d["references"]))
    frame = _ModelFrame.__new__(_ModelFrame)
    frame.spec = spec
    frame.covariates = covariates
    frame.n = 0
    frame.built = built_terms

    bases = {}
    for comp, bd in d["bases"].items():
        bm = _measure_from_dict(bd["measure"])
        transform = np.asarray(bd["transform"])
        if bd["kind"] == "indicator":
            raw = np.eye(bm.n_atoms)
        elif bd["kind"] == "bspline":
            db = d["density_basis"]
            knots = bspline_knots(bm.interval[0], bm.interval[1], db["knots"], db["degree"])
            raw = bspline_eval(knots, db["degree"], bm.grid)
        else:
            raise DataError(f"unknown density basis kind {bd['kind']!r}")
        bases[comp] = DensityBasis(bm, raw @ transform, np.empty((0, 0)), transform, bd["kind"])

    def state_from(comp):
        fd = d["fits"][comp]
        return FitState(
            measure=bases[comp].measure,
            offset_clr=np.asarray(fd["offset"]),
            coefficients=[np.asarray(c) for c in fd["coefficients"]],
            fitted_clr=np.empty((0, 0)),
            selections=fd["selections"],
            risk_path=np.asarray(fd["risk_path"]),
            m_stop=fd["m_stop"],
            stop_curve=None if fd["stop_curve"] is None else np.asarray(fd["stop_curve"]),
        )

    if set(d["fits"]) == {"continuous", "discrete"}:
        fits = MixedFit(
            state_from("continuous"), state_from("discrete"), measure, np.empty((0, 0))
        )
    else:
        fits = state_from("single")
    model = FittedModel(
        spec=spec,
        measure=measure,
        frame=frame,
        fits=fits,
        bases=bases,
        lambda_density=d["density_basis"]["lambda_density"],
        config=None,
    )
    model.density_options = {
        "density_knots": d["density_basis"]["knots"],
        "density_degree": d["density_basis"]["degree"],
        "density_penalty_order": d["density_basis"]["penalty_order"],
    }
    return model


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def _check_keys(d: dict, allowed: set, path: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}: missing required key {key!r}")
    return d[key]


def _typed(value, types, path, type_name):
    if not isinstance(value, types) or isinstance(value, bool) and bool not in (
        types if isinstance(types, tuple) else (types,)
    ):
        raise ConfigError(f"{path}: expected {type_name}")
    return value


def validate_config(raw: dict) -> dict:
    """Validate and normalize a run configuration.

    Returns a new dict with defaults filled in; raises ConfigError with a
    field path on the first problem found.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _check_keys(
        raw,
        {"seed", "threads", "data", "measure", "kde", "model", "boosting",
         "simulation", "interpret", "out"},
        "config",
    )
    cfg = {
        "seed": int(_typed(raw.get("seed", 0), (int,), "config.seed", "an integer")),
        "threads": int(_typed(raw.get("threads", 1), (int,), "config.threads", "an integer")),
        "out": raw.get("out"),
    }
    if cfg["threads"] < 1:
        raise ConfigError("config.threads: must be at least 1")

    data = raw.get("data", {})
    _check_keys(data, {"observations", "densities", "newdata", "model"}, "config.data")
    cfg["data"] = {
        k: data.get(k) for k in ("observations", "densities", "newdata", "model")
    }

    measure = raw.get("measure")
    if measure is not None:
        _check_keys(measure, {"interval", "atoms", "grid_size"}, "config.measure")
        interval = measure.get("interval")
        if interval is not None:
            if (not isinstance(interval, list) or len(interval) != 2):
                raise ConfigError("config.measure.interval: expected [a, b]")
        atoms = measure.get("atoms", [])
        if not isinstance(atoms, list):
            raise ConfigError("config.measure.atoms: expected a list")
        parsed_atoms = []
        for i, atom in enumerate(atoms):
            _check_keys(atom, {"location", "weight"}, f"config.measure.atoms[{i}]")
            parsed_atoms.append(
                (
                    float(_require(atom, "location", f"config.measure.atoms[{i}]")),
                    float(atom.get("weight", 1.0)),
                )
            )
        cfg["measure"] = {
            "interval": interval,
            "atoms": parsed_atoms,
            "grid_size": int(measure.get("grid_size", 100)),
        }

    kde = raw.get("kde", {})
    _check_keys(kde, {"bandwidth", "bandwidth_grid", "floor"}, "config.kde")
    bandwidth = kde.get("bandwidth", "auto")
    if isinstance(bandwidth, str) and bandwidth != "auto":
        raise ConfigError("config.kde.bandwidth: expected 'auto' or a number")
    cfg["kde"] = {
        "bandwidth": bandwidth,
        "bandwidth_grid": kde.get("bandwidth_grid"),
        "floor": float(kde.get("floor", 1e-6)),
    }

    model = raw.get("model")
    if model is not None:
        _check_keys(
            model,
            {"coding", "references", "default_df", "density_basis", "terms"},
            "config.model",
        )
        coding = model.get("coding", "effect")
        if coding not in ("effect", "reference"):
            raise ConfigError("config.model.coding: expected 'effect' or 'reference'")
        db = model.get("density_basis", {})
        _check_keys(
            db, {"knots", "degree", "penalty_order", "lambda_density"},
            "config.model.density_basis",
        )
        terms = _require(model, "terms", "config.model")
        if not isinstance(terms, list) or not terms:
            raise ConfigError("config.model.terms: expected a nonempty list")
        parsed_terms = []
        for i, term in enumerate(terms):
            path = f"config.model.terms[{i}]"
            _check_keys(
                term,
                {"name", "kind", "covariates", "df", "knots", "degree",
                 "penalty_order", "orthogonal_to"},
                path,
            )
            parsed_terms.append(
                {
                    "name": str(_require(term, "name", path)),
                    "kind": str(_require(term, "kind", path)),
                    "covariates": list(term.get("covariates", [])),
                    "df": term.get("df"),
                    "knots": int(term.get("knots", 8)),
                    "degree": int(term.get("degree", 3)),
                    "penalty_order": int(term.get("penalty_order", 2)),
                    "orthogonal_to": list(term.get("orthogonal_to", [])),
                }
            )
        cfg["model"] = {
            "coding": coding,
            "references": dict(model.get("references", {})),
            "default_df": float(model.get("default_df", 2.0)),
            "density_basis": {
                "knots": int(db.get("knots", 10)),
                "degree": int(db.get("degree", 3)),
                "penalty_order": int(db.get("penalty_order", 2)),
                "lambda_density": float(db.get("lambda_density", 0.0)),
            },
            "terms": parsed_terms,
        }

    boosting = raw.get("boosting", {})
    _check_keys(
        boosting, {"step_length", "max_iterations", "stopping"}, "config.boosting"
    )
    stopping = boosting.get("stopping", {})
    _check_keys(
        stopping, {"method", "m_stop", "folds", "replicates"}, "config.boosting.stopping"
    )
    method = stopping.get("method", "fixed")
    if method not in ("fixed", "cv", "bootstrap"):
        raise ConfigError(
            "config.boosting.stopping.method: expected 'fixed', 'cv', or 'bootstrap'"
        )
    cfg["boosting"] = {
        "step_length": float(boosting.get("step_length", 0.1)),
        "max_iterations": int(boosting.get("max_iterations", 250)),
        "stopping": {
            "method": method,
            "m_stop": stopping.get("m_stop"),
            "folds": int(stopping.get("folds", 10)),
            "replicates": int(stopping.get("replicates", 25)),
        },
    }
    if not 0.0 < cfg["boosting"]["step_length"] < 1.0:
        raise ConfigError("config.boosting.step_length: must lie in (0, 1)")
    if cfg["boosting"]["max_iterations"] < 1:
        raise ConfigError("config.boosting.max_iterations: must be at least 1")
    if cfg["boosting"]["stopping"]["folds"] < 2:
        raise ConfigError("config.boosting.stopping.folds: must be at least 2")
    if cfg["boosting"]["stopping"]["replicates"] < 1:
        raise ConfigError("config.boosting.stopping.replicates: must be at least 1")

    simulation = raw.get("simulation", {})
    _check_keys(
        simulation, {"replicates", "truncation", "noise_scale"}, "config.simulation"
    )
    cfg["simulation"] = {
        "replicates": int(simulation.get("replicates", 20)),
        "truncation": simulation.get("truncation"),
        "noise_scale": float(simulation.get("noise_scale", 1.0)),
    }
    if cfg["simulation"]["replicates"] < 1:
        raise ConfigError("config.simulation.replicates: must be at least 1")
    if cfg["simulation"]["noise_scale"] < 0:
        raise ConfigError("config.simulation.noise_scale: must be nonnegative")

    interpret = raw.get("interpret", {})
    _check_keys(
        interpret,
        {"effects", "odds", "did", "heatmap_resolution", "svg"},
        "config.interpret",
    )
    cfg["interpret"] = {
        "effects": interpret.get("effects", []),
        "odds": interpret.get("odds", []),
        "did": interpret.get("did", []),
        "heatmap_resolution": int(interpret.get("heatmap_resolution", 25)),
        "svg": bool(interpret.get("svg", False)),
    }
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return validate_config(raw)
