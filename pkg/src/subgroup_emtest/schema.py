"""JSON Schemas (draft 2020-12) for the reports written by ``--out``.

Schemas are plain dictionaries so the package needs no validator at run
time; ``subgroup-emtest schema NAME`` prints one.
"""

from __future__ import annotations

DIALECT = "https://json-schema.org/draft/2020-12/schema"

_num = {"type": "number"}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_count = {"type": "integer", "minimum": 0}
_numlist = {"type": "array", "items": _num}
_matrix = {"type": "array", "items": _numlist}

_family = {
    "type": "object",
    "required": ["kind", "sigma"],
    "properties": {"kind": {"enum": ["normal", "logit"]}, "sigma": _num},
}

_columns = {
    "type": "object",
    "required": ["response", "x", "z"],
    "properties": {
        "response": {"type": "string"},
        "x": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "z": {"type": "array", "items": {"type": "string"}},
    },
}

_config = {
    "type": "object",
    "required": ["K", "C", "beta_grid", "lam", "inner_restarts", "restarts", "mc_draws", "seed"],
    "properties": {
        "K": {"type": "integer", "minimum": 1},
        "C": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                        {"type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0}}]},
        "beta_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
                      "minItems": 1},
        "lam": {"type": "number", "minimum": 0},
        "inner_restarts": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1},
        "mc_draws": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
    },
}

_report = {
    "type": "object",
    "required": ["m0", "statistic", "pvalue", "statistics_by_iteration", "pvalues_by_iteration",
                 "chibar_weights", "null_fit", "config", "seeds", "traces", "grid_errors"],
    "properties": {
        "m0": {"type": "integer", "minimum": 1},
        "statistic": _num,
        "pvalue": _prob,
        "statistics_by_iteration": _numlist,
        "pvalues_by_iteration": {"type": "array", "items": _prob},
        "chibar_weights": {
            "type": "object",
            "required": ["a", "mc_draws", "seed"],
            "properties": {"a": {"type": "array", "items": _prob, "minItems": 2},
                           "mc_draws": {"type": "integer", "minimum": 1}, "seed": {"type": "integer"}},
        },
        "null_fit": {
            "type": "object",
            "required": ["alphas", "thetas", "gamma", "loglik", "converged", "iterations"],
            "properties": {"alphas": {"type": "array", "items": _prob}, "thetas": _matrix, "gamma": _numlist,
                           "loglik": _num, "converged": {"type": "boolean"}, "iterations": _count},
        },
        "config": _config,
        "seeds": {"type": "object", "required": ["master", "null_fit", "em", "monte_carlo"],
                  "additionalProperties": {"type": "integer"}},
        "traces": {"type": "object", "additionalProperties": _numlist},
        "grid_errors": {"type": "object", "additionalProperties": {"type": "string"}},
        "wall_time": {"type": "number", "minimum": 0},
    },
}

_scenario = {
    "type": "object",
    "required": ["id", "family", "weights", "thetas", "gamma", "covariates", "n", "membership"],
    "properties": {"id": {"type": "string"}, "family": _family, "weights": {"type": "array", "items": _prob},
                   "thetas": _matrix, "gamma": _numlist, "covariates": {"type": "string"},
                   "n": {"type": "integer", "minimum": 1}, "membership": {"type": "string"}},
}

_metrics = {
    "type": "object",
    "required": ["accuracy", "precision", "recall", "f1", "auc"],
    "additionalProperties": _prob,
}

SCHEMAS = {
    "test": {
        "$schema": DIALECT,
        "title": "EM test report",
        "type": "object",
        "required": ["command", "input", "columns", "family", "n", "level", "report"],
        "properties": {"command": {"const": "test"}, "input": {"type": "string"}, "columns": _columns,
                       "family": _family, "n": {"type": "integer", "minimum": 1}, "level": _prob,
                       "report": _report},
    },
    "sequential": {
        "$schema": DIALECT,
        "title": "sequential selection report",
        "type": "object",
        "required": ["command", "input", "columns", "family", "n", "result"],
        "properties": {
            "command": {"const": "sequential"}, "input": {"type": "string"}, "columns": _columns,
            "family": _family, "n": {"type": "integer", "minimum": 1},
            "result": {
                "type": "object",
                "required": ["selected_m", "level", "capped", "halted", "reports"],
                "properties": {"selected_m": {"type": "integer", "minimum": 1}, "level": _prob,
                               "capped": {"type": "boolean"}, "halted": {"type": ["string", "null"]},
                               "reports": {"type": "array", "items": _report}},
            },
        },
    },
    "simulate": {
        "$schema": DIALECT,
        "title": "Monte Carlo rejection table",
        "type": "object",
        "required": ["command", "scenario", "config", "table"],
        "properties": {
            "command": {"const": "simulate"}, "scenario": _scenario, "config": _config,
            "table": {
                "type": "object",
                "required": ["spec_id", "m0", "n", "reps", "failures", "rows", "pvalues"],
                "properties": {
                    "reps": {"type": "integer", "minimum": 1}, "failures": _count,
                    "rows": {"type": "array", "items": {
                        "type": "object", "required": ["level", "proportion", "reps", "mc_se"],
                        "properties": {"level": _prob, "proportion": _prob, "reps": _count, "mc_se": _num}}},
                    "pvalues": {"type": "array", "items": {"oneOf": [_prob, {"type": "null"}]}},
                },
            },
        },
    },
    "tune": {
        "$schema": DIALECT,
        "title": "penalty tuning table",
        "type": "object",
        "required": ["command", "scenario", "config", "result"],
        "properties": {
            "command": {"const": "tune"}, "scenario": _scenario, "config": _config,
            "result": {
                "type": "object",
                "required": ["chosen_c", "c_grid", "levels", "table", "reps", "failures"],
                "properties": {"chosen_c": {"type": "number", "exclusiveMinimum": 0}, "c_grid": _numlist,
                               "levels": {"type": "array", "items": _prob}, "table": _matrix,
                               "reps": {"type": "integer", "minimum": 1}, "failures": _count},
            },
        },
    },
    "predict": {
        "$schema": DIALECT,
        "title": "cross-validated prediction report",
        "type": "object",
        "required": ["command", "input", "n", "report"],
        "properties": {
            "command": {"const": "predict"}, "input": {"type": "string"}, "n": {"type": "integer", "minimum": 1},
            "report": {
                "type": "object",
                "required": ["m", "k", "seed", "routing_rule", "threshold", "aggregate", "failed_folds", "folds",
                             "coefficient_names", "coefficients", "assignment_counts"],
                "properties": {
                    "m": {"type": "integer", "minimum": 1}, "k": {"type": "integer", "minimum": 2},
                    "seed": {"type": "integer"}, "routing_rule": {"type": "string"}, "threshold": _prob,
                    "aggregate": {"oneOf": [_metrics, {"type": "object", "maxProperties": 0}]},
                    "failed_folds": {"type": "array", "items": _count},
                    "folds": {"type": "array", "items": {
                        "type": "object", "required": ["fold", "n_train", "n_test", "metrics", "error"],
                        "properties": {"metrics": {"oneOf": [_metrics, {"type": "null"}]},
                                       "error": {"type": ["string", "null"]}}}},
                    "coefficient_names": {"type": "array", "items": {"type": "string"}},
                    "coefficients": {"type": "array", "items": {
                        "type": "object", "required": ["alpha", "coef"],
                        "properties": {"alpha": _prob, "coef": _numlist}}},
                    "assignment_counts": {"type": "array", "items": _count},
                },
            },
        },
    },
}
