"""Declarative scenario configuration: parsing, validation, canonical hashing.

Configs are JSON documents.  Validation is strict (unknown keys are
rejected by name) and exhaustive: all problems are collected and reported
together in a :class:`ConfigError` instead of stopping at the first.
Loading normalizes the document (defaults filled, amplitudes as [re, im]
pairs), so ``serialize(load(x))`` is canonical and the content hash is
stable across key order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import ConfigError
from .integrator import IntegrationPlan
from .operators import pair_potential_from_config

__all__ = ["ScenarioConfig", "load_config", "from_dict", "serialize", "config_hash"]

SCHEMA_VERSION = 1

_SUBSYSTEM_KEYS = {"label", "kind", "dim", "mass", "grid_spacing", "periodic", "x_min"}
_TERM_KEYS = {
    "kinetic": {"type", "subsystem", "mass"},
    "external_potential": {"type", "subsystem", "samples"},
    "interaction": {"type", "subsystem_i", "subsystem_j", "potential"},
    "spin_coupling": {"type", "spin_subsystem", "pointer_subsystem", "strength"},
}
_PLAN_KEYS = {"dt", "n_steps", "seed", "noise_kind", "record_every", "collapse_threshold"}
_OBS_KINDS = {
    "energy",
    "collapse_potential",
    "spin_z",
    "position",
    "width",
    "momentum",
    "total_shift",
}
_OBS_NEED_SUBSYSTEM = {"spin_z", "position", "width", "momentum"}
_AUDIT_KINDS = {"energy", "total_quasimomentum", "spin_z", "custom"}
_TOP_KEYS = {
    "schema_version",
    "name",
    "space",
    "operators",
    "collapse",
    "initial_state",
    "plan",
    "observables",
    "branches",
    "bipartitions",
    "audits",
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated, normalized scenario description.

    Sections are stored as plain normalized dicts/tuples so the config can
    be hashed, serialized, and shipped to worker processes untouched;
    operator and state construction happens in the scenarios module.
    """

    schema_version: int
    name: str
    space: dict
    operators: dict
    collapse: dict
    initial_state: dict
    plan: dict
    observables: tuple
    branches: tuple
    bipartitions: tuple
    audits: tuple

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "space": _deep_copy(self.space),
            "operators": _deep_copy(self.operators),
            "collapse": _deep_copy(self.collapse),
            "initial_state": _deep_copy(self.initial_state),
            "plan": _deep_copy(self.plan),
            "observables": _deep_copy(list(self.observables)),
            "branches": _deep_copy(list(self.branches)),
            "bipartitions": [list(b) for b in self.bipartitions],
            "audits": _deep_copy(list(self.audits)),
        }

    def integration_plan(self) -> IntegrationPlan:
        return IntegrationPlan(**self.plan)

    @property
    def collapse_enabled(self) -> bool:
        return bool(self.collapse.get("enabled", False))

    @property
    def has_external_potential(self) -> bool:
        return any(t["type"] == "external_potential" for t in self.operators["terms"])

    @property
    def subsystem_labels(self) -> tuple[str, ...]:
        return tuple(s["label"] for s in self.space["subsystems"])


def _deep_copy(obj):
    return json.loads(json.dumps(obj))


def load_config(path) -> ScenarioConfig:
    """Load and validate a JSON config file.

    Parse errors carry line/column; validation reports every problem.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            [f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]
        ) from exc
    return from_dict(raw)


def serialize(config: ScenarioConfig) -> str:
    """Canonical JSON text (sorted keys, stable float formatting)."""
    return json.dumps(config.to_dict(), sort_keys=True, indent=2)


def config_hash(config: ScenarioConfig) -> str:
    """Content-derived hash, stable across key order."""
    compact = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(compact.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

class _Check:
    def __init__(self):
        self.errors: list[str] = []

    def err(self, path: str, msg: str):
        self.errors.append(f"{path}: {msg}")

    def unknown_keys(self, d: Mapping, allowed: set, path: str):
        for key in d:
            if key not in allowed:
                self.err(path, f"unknown key {key!r}")

    def require(self, d: Mapping, key: str, path: str) -> bool:
        if key not in d:
            self.err(path, f"missing required key {key!r}")
            return False
        return True

    def number(self, d: Mapping, key: str, path: str, *, positive=False,
               default=None, integer=False):
        if key not in d:
            return default
        val = d[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.err(f"{path}.{key}", f"expected a number, got {type(val).__name__}")
            return default
        if integer and int(val) != val:
            self.err(f"{path}.{key}", "expected an integer")
            return default
        if positive and not val > 0:
            self.err(f"{path}.{key}", "must be > 0")
            return default
        return int(val) if integer else float(val)


def _norm_amplitude_list(raw, dim, path, chk) -> list | None:
    if not isinstance(raw, list):
        chk.err(path, "expected an amplitude array")
        return None
    out = []
    for i, entry in enumerate(raw):
        if isinstance(entry, (int, float)) and not isinstance(entry, bool):
            out.append([float(entry), 0.0])
        elif (
            isinstance(entry, list)
            and len(entry) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry)
        ):
            out.append([float(entry[0]), float(entry[1])])
        else:
            chk.err(f"{path}[{i}]", "expected a number or [re, im] pair")
            return None
    if dim is not None and len(out) != dim:
        chk.err(path, f"expected {dim} amplitudes, got {len(out)}")
        return None
    return out


def from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Validate a raw mapping and return the normalized config.

    Raises :class:`ConfigError` carrying the complete list of problems.
    """
    chk = _Check()
    if not isinstance(raw, Mapping):
        raise ConfigError(["top level: expected a JSON object"])
    chk.unknown_keys(raw, _TOP_KEYS, "top level")

    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        chk.err("schema_version", f"unsupported version {version!r}")
    name = raw.get("name", "")
    if not isinstance(name, str):
        chk.err("name", "expected a string")
        name = ""

    # ---- space ----
    subsystems: list[dict] = []
    sub_by_label: dict[str, dict] = {}
    if chk.require(raw, "space", "top level") and isinstance(raw["space"], Mapping):
        space_raw = raw["space"]
        chk.unknown_keys(space_raw, {"subsystems"}, "space")
        subs_raw = space_raw.get("subsystems")
        if not isinstance(subs_raw, list) or not subs_raw:
            chk.err("space.subsystems", "expected a non-empty list")
            subs_raw = []
        for i, s in enumerate(subs_raw):
            path = f"space.subsystems[{i}]"
            if not isinstance(s, Mapping):
                chk.err(path, "expected an object")
                continue
            chk.unknown_keys(s, _SUBSYSTEM_KEYS, path)
            label = s.get("label")
            kind = s.get("kind")
            if not isinstance(label, str) or not label:
                chk.err(path, "missing or invalid 'label'")
                continue
            if kind not in ("lattice1d", "spin", "discrete"):
                chk.err(path, f"kind must be lattice1d/spin/discrete, got {kind!r}")
                continue
            dim = chk.number(s, "dim", path, positive=True, integer=True)
            if dim is None:
                chk.err(path, "missing positive integer 'dim'")
                continue
            entry = {
                "label": label,
                "kind": kind,
                "dim": dim,
                "mass": chk.number(s, "mass", path, positive=True, default=1.0),
            }
            if kind == "lattice1d":
                if dim < 2:
                    chk.err(path, "lattice dim must be >= 2")
                spacing = chk.number(s, "grid_spacing", path, positive=True)
                if spacing is None:
                    chk.err(path, "lattice needs grid_spacing > 0")
                entry["grid_spacing"] = spacing
                entry["periodic"] = bool(s.get("periodic", False))
                if "x_min" in s:
                    entry["x_min"] = chk.number(s, "x_min", path)
            else:
                for forbidden in ("grid_spacing", "periodic", "x_min"):
                    if forbidden in s:
                        chk.err(path, f"{forbidden!r} only valid for lattices")
            if label in sub_by_label:
                chk.err(path, f"duplicate subsystem label {label!r}")
            else:
                sub_by_label[label] = entry
                subsystems.append(entry)
    labels = set(sub_by_label)

    def check_label(value, path, kinds=None) -> bool:
        if value not in labels:
            chk.err(path, f"unknown subsystem {value!r}")
            return False
        if kinds and sub_by_label[value]["kind"] not in kinds:
            chk.err(
                path,
                f"subsystem {value!r} has kind {sub_by_label[value]['kind']}, "
                f"expected one of {sorted(kinds)}",
            )
            return False
        return True

    # ---- operators ----
    def validate_terms(terms_raw, base_path: str) -> list[dict]:
        terms: list[dict] = []
        if not isinstance(terms_raw, list):
            chk.err(base_path, "expected a list of terms")
            return terms
        for i, t in enumerate(terms_raw):
            path = f"{base_path}[{i}]"
            if not isinstance(t, Mapping):
                chk.err(path, "expected an object")
                continue
            ttype = t.get("type")
            if ttype not in _TERM_KEYS:
                chk.err(path, f"unknown term type {ttype!r}")
                continue
            chk.unknown_keys(t, _TERM_KEYS[ttype], path)
            entry: dict[str, Any] = {"type": ttype}
            if ttype == "kinetic":
                if chk.require(t, "subsystem", path) and check_label(
                    t["subsystem"], f"{path}.subsystem", {"lattice1d"}
                ):
                    entry["subsystem"] = t["subsystem"]
                    if "mass" in t:
                        entry["mass"] = chk.number(t, "mass", path, positive=True)
                    terms.append(entry)
            elif ttype == "external_potential":
                ok = chk.require(t, "subsystem", path) and check_label(
                    t["subsystem"], f"{path}.subsystem"
                )
                samples = t.get("samples")
                if not isinstance(samples, list) or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool)
                    for v in samples
                ):
                    chk.err(f"{path}.samples", "expected a list of numbers")
                    ok = False
                elif ok and len(samples) != sub_by_label[t["subsystem"]]["dim"]:
                    chk.err(
                        f"{path}.samples",
                        f"expected {sub_by_label[t['subsystem']]['dim']} samples",
                    )
                    ok = False
                if ok:
                    entry["subsystem"] = t["subsystem"]
                    entry["samples"] = [float(v) for v in samples]
                    terms.append(entry)
            elif ttype == "interaction":
                ok = True
                for key in ("subsystem_i", "subsystem_j"):
                    ok = chk.require(t, key, path) and check_label(
                        t.get(key), f"{path}.{key}", {"lattice1d"}
                    ) and ok
                if ok and t["subsystem_i"] == t["subsystem_j"]:
                    chk.err(path, "interaction needs two distinct subsystems")
                    ok = False
                pot = t.get("potential")
                if not isinstance(pot, Mapping) or "family" not in pot:
                    chk.err(f"{path}.potential", "expected an object with a 'family'")
                    ok = False
                else:
                    family = pot["family"]
                    params = {k: v for k, v in pot.items() if k != "family"}
                    try:
                        pair_potential_from_config(family, params)
                    except Exception as exc:
                        chk.err(f"{path}.potential", str(exc))
                        ok = False
                if ok:
                    entry["subsystem_i"] = t["subsystem_i"]
                    entry["subsystem_j"] = t["subsystem_j"]
                    entry["potential"] = _deep_copy(dict(pot))
                    terms.append(entry)
            elif ttype == "spin_coupling":
                ok = chk.require(t, "spin_subsystem", path) and check_label(
                    t.get("spin_subsystem"), f"{path}.spin_subsystem", {"spin"}
                )
                ok = chk.require(t, "pointer_subsystem", path) and check_label(
                    t.get("pointer_subsystem"), f"{path}.pointer_subsystem", {"lattice1d"}
                ) and ok
                strength = chk.number(t, "strength", path)
                if strength is None:
                    chk.err(path, "missing numeric 'strength'")
                    ok = False
                if ok:
                    if sub_by_label[t["spin_subsystem"]]["dim"] != 2:
                        chk.err(path, "spin_coupling spin subsystem must have dim 2")
                    else:
                        entry["spin_subsystem"] = t["spin_subsystem"]
                        entry["pointer_subsystem"] = t["pointer_subsystem"]
                        entry["strength"] = strength
                        terms.append(entry)
        return terms

    ops_raw = raw.get("operators", {"terms": []})
    if not isinstance(ops_raw, Mapping):
        chk.err("operators", "expected an object")
        ops_raw = {"terms": []}
    chk.unknown_keys(ops_raw, {"terms"}, "operators")
    operators = {"terms": validate_terms(ops_raw.get("terms", []), "operators.terms")}

    # ---- collapse ----
    collapse_raw = raw.get("collapse", {"enabled": False})
    collapse = {"enabled": False, "c_scale": 1.0, "tau0": 1.0}
    if not isinstance(collapse_raw, Mapping):
        chk.err("collapse", "expected an object")
    else:
        chk.unknown_keys(collapse_raw, {"enabled", "c_scale", "tau0"}, "collapse")
        collapse["enabled"] = bool(collapse_raw.get("enabled", True))
        collapse["c_scale"] = chk.number(
            collapse_raw, "c_scale", "collapse", positive=True, default=1.0
        )
        collapse["tau0"] = chk.number(
            collapse_raw, "tau0", "collapse", positive=True, default=1.0
        )

    # ---- initial state ----
    init: dict[str, Any] = {}
    if chk.require(raw, "initial_state", "top level") and isinstance(
        raw["initial_state"], Mapping
    ):
        init_raw = raw["initial_state"]
        kind = init_raw.get("kind")
        if kind == "product":
            chk.unknown_keys(init_raw, {"kind", "factors", "shift_sector"}, "initial_state")
            init["kind"] = "product"
            factors_raw = init_raw.get("factors")
            factors: dict[str, Any] = {}
            if not isinstance(factors_raw, Mapping):
                chk.err("initial_state.factors", "expected an object of per-label factors")
            else:
                for lbl in factors_raw:
                    if lbl not in labels:
                        chk.err("initial_state.factors", f"unknown subsystem {lbl!r}")
                missing = labels - set(factors_raw)
                if missing:
                    chk.err(
                        "initial_state.factors",
                        f"missing factors for {sorted(missing)}",
                    )
                for lbl, fac in factors_raw.items():
                    if lbl not in labels:
                        continue
                    path = f"initial_state.factors.{lbl}"
                    dim = sub_by_label[lbl]["dim"]
                    if isinstance(fac, Mapping):
                        chk.unknown_keys(fac, {"gaussian"}, path)
                        g = fac.get("gaussian")
                        if not isinstance(g, Mapping):
                            chk.err(path, "expected an amplitude array or {'gaussian': {...}}")
                            continue
                        if sub_by_label[lbl]["kind"] != "lattice1d":
                            chk.err(path, "gaussian factors need a lattice subsystem")
                            continue
                        chk.unknown_keys(g, {"center", "width", "momentum"}, f"{path}.gaussian")
                        factors[lbl] = {
                            "gaussian": {
                                "center": chk.number(g, "center", f"{path}.gaussian", default=0.0),
                                "width": chk.number(
                                    g, "width", f"{path}.gaussian", positive=True, default=1.0
                                ),
                                "momentum": chk.number(
                                    g, "momentum", f"{path}.gaussian", default=0.0
                                ),
                            }
                        }
                    else:
                        arr = _norm_amplitude_list(fac, dim, path, chk)
                        if arr is not None:
                            factors[lbl] = arr
            init["factors"] = factors
            if "shift_sector" in init_raw:
                sector = chk.number({"shift_sector": init_raw["shift_sector"]},
                                    "shift_sector", "initial_state", integer=True)
                lattices = [s for s in subsystems if s["kind"] == "lattice1d"]
                if not lattices or not all(s.get("periodic") for s in lattices):
                    chk.err(
                        "initial_state.shift_sector",
                        "sector projection needs periodic lattice subsystems",
                    )
                init["shift_sector"] = sector
        elif kind == "two_branch":
            chk.unknown_keys(
                init_raw,
                {"kind", "delta", "model", "branch_subsystem", "mirror_subsystem",
                 "mirror_width"},
                "initial_state",
            )
            init["kind"] = "two_branch"
            delta = chk.number(init_raw, "delta", "initial_state")
            if delta is None or not (0.0 <= delta <= 1.0):
                chk.err("initial_state.delta", "expected delta in [0, 1]")
            init["delta"] = delta
            model = init_raw.get("model", "two-mode")
            if model not in ("two-mode", "displaced-gaussian"):
                chk.err("initial_state.model", f"unknown mirror model {model!r}")
            init["model"] = model
            for key, kinds in (
                ("branch_subsystem", None),
                ("mirror_subsystem",
                 {"lattice1d"} if model == "displaced-gaussian" else None),
            ):
                if chk.require(init_raw, key, "initial_state"):
                    check_label(init_raw[key], f"initial_state.{key}", kinds)
                    init[key] = init_raw[key]
            if "mirror_width" in init_raw:
                init["mirror_width"] = chk.number(
                    init_raw, "mirror_width", "initial_state", positive=True
                )
        else:
            chk.err("initial_state.kind", f"expected 'product' or 'two_branch', got {kind!r}")

    # ---- plan ----
    plan: dict[str, Any] = {}
    if chk.require(raw, "plan", "top level") and isinstance(raw["plan"], Mapping):
        plan_raw = raw["plan"]
        chk.unknown_keys(plan_raw, _PLAN_KEYS, "plan")
        plan = {
            "dt": chk.number(plan_raw, "dt", "plan", positive=True),
            "n_steps": chk.number(plan_raw, "n_steps", "plan", positive=True, integer=True),
            "seed": chk.number(plan_raw, "seed", "plan", integer=True, default=0),
            "noise_kind": plan_raw.get("noise_kind", "complex"),
            "record_every": chk.number(
                plan_raw, "record_every", "plan", positive=True, integer=True, default=1
            ),
            "collapse_threshold": chk.number(
                plan_raw, "collapse_threshold", "plan", default=1.0 - 1e-6
            ),
        }
        if plan["dt"] is not None and plan["n_steps"] is not None:
            try:
                IntegrationPlan(**plan)
            except (ValueError, TypeError) as exc:
                chk.err("plan", str(exc))

    # ---- observables ----
    observables: list[dict] = []
    seen_names: set[str] = set()
    for i, o in enumerate(raw.get("observables", [])):
        path = f"observables[{i}]"
        if not isinstance(o, Mapping):
            chk.err(path, "expected an object")
            continue
        chk.unknown_keys(o, {"name", "kind", "subsystem"}, path)
        oname = o.get("name")
        okind = o.get("kind")
        if not isinstance(oname, str) or not oname:
            chk.err(path, "missing observable 'name'")
            continue
        if oname in seen_names:
            chk.err(path, f"duplicate observable name {oname!r}")
            continue
        if okind not in _OBS_KINDS:
            chk.err(path, f"unknown observable kind {okind!r}")
            continue
        entry = {"name": oname, "kind": okind}
        if okind in _OBS_NEED_SUBSYSTEM:
            if not chk.require(o, "subsystem", path):
                continue
            kinds = {"spin_z": {"spin"}, "position": {"lattice1d"},
                     "width": {"lattice1d"}, "momentum": {"lattice1d"}}[okind]
            if not check_label(o["subsystem"], f"{path}.subsystem", kinds):
                continue
            entry["subsystem"] = o["subsystem"]
        elif "subsystem" in o:
            chk.err(path, f"kind {okind!r} takes no subsystem")
            continue
        seen_names.add(oname)
        observables.append(entry)

    # ---- branches ----
    branches: list[dict] = []
    branch_subsystem: str | None = None
    covered: set[int] = set()
    for i, b in enumerate(raw.get("branches", [])):
        path = f"branches[{i}]"
        if not isinstance(b, Mapping):
            chk.err(path, "expected an object")
            continue
        chk.unknown_keys(b, {"label", "subsystem", "sites"}, path)
        blabel = b.get("label")
        if not isinstance(blabel, str) or not blabel:
            chk.err(path, "missing branch 'label'")
            continue
        if not chk.require(b, "subsystem", path) or not check_label(
            b["subsystem"], f"{path}.subsystem"
        ):
            continue
        if branch_subsystem is None:
            branch_subsystem = b["subsystem"]
        elif b["subsystem"] != branch_subsystem:
            chk.err(path, "all branches must live on the same subsystem")
            continue
        sites = b.get("sites")
        dim = sub_by_label[b["subsystem"]]["dim"]
        if (
            not isinstance(sites, list)
            or not sites
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in sites)
        ):
            chk.err(f"{path}.sites", "expected a non-empty list of integers")
            continue
        bad = [v for v in sites if not (0 <= v < dim)]
        if bad:
            chk.err(f"{path}.sites", f"site indices {bad} outside [0, {dim})")
            continue
        overlap = covered & set(sites)
        if overlap:
            chk.err(f"{path}.sites", f"sites {sorted(overlap)} already used by another branch")
            continue
        covered |= set(sites)
        branches.append({"label": blabel, "subsystem": b["subsystem"], "sites": sorted(sites)})
    if branches and branch_subsystem is not None:
        dim = sub_by_label[branch_subsystem]["dim"]
        if covered != set(range(dim)):
            chk.err(
                "branches",
                f"branch sites must partition all {dim} basis states of "
                f"{branch_subsystem!r} so weights sum to 1",
            )
    labels_of_branches = [b["label"] for b in branches]
    if len(set(labels_of_branches)) != len(labels_of_branches):
        chk.err("branches", "duplicate branch labels")

    # ---- bipartitions ----
    bipartitions: list[tuple[str, ...]] = []
    for i, part in enumerate(raw.get("bipartitions", [])):
        path = f"bipartitions[{i}]"
        if not isinstance(part, list) or not part:
            chk.err(path, "expected a non-empty list of subsystem labels")
            continue
        side = []
        ok = True
        for lbl in part:
            if lbl not in labels:
                chk.err(path, f"unknown subsystem {lbl!r}")
                ok = False
            else:
                side.append(lbl)
        if ok and len(set(side)) == len(labels):
            chk.err(path, "bipartition side must be a strict subset of subsystems")
            ok = False
        if ok:
            bipartitions.append(tuple(sorted(set(side))))

    # ---- audits ----
    audits: list[dict] = []
    audit_names: set[str] = set()
    for i, a in enumerate(raw.get("audits", [])):
        path = f"audits[{i}]"
        if not isinstance(a, Mapping):
            chk.err(path, "expected an object")
            continue
        chk.unknown_keys(a, {"name", "kind", "subsystem", "terms"}, path)
        aname = a.get("name")
        akind = a.get("kind")
        if not isinstance(aname, str) or not aname:
            chk.err(path, "missing audit 'name'")
            continue
        if aname in audit_names:
            chk.err(path, f"duplicate audit name {aname!r}")
            continue
        if akind not in _AUDIT_KINDS:
            chk.err(path, f"unknown audit kind {akind!r}")
            continue
        entry = {"name": aname, "kind": akind}
        if akind == "spin_z":
            if not chk.require(a, "subsystem", path) or not check_label(
                a["subsystem"], f"{path}.subsystem", {"spin"}
            ):
                continue
            entry["subsystem"] = a["subsystem"]
        elif akind == "total_quasimomentum":
            lattices = [s for s in subsystems if s["kind"] == "lattice1d"]
            if not lattices or not all(s.get("periodic") for s in lattices):
                chk.err(path, "total_quasimomentum needs all-periodic lattice subsystems")
                continue
        elif akind == "custom":
            if not chk.require(a, "terms", path):
                continue
            entry["terms"] = validate_terms(a["terms"], f"{path}.terms")
        audit_names.add(aname)
        audits.append(entry)

    if chk.errors:
        raise ConfigError(chk.errors)

    return ScenarioConfig(
        schema_version=SCHEMA_VERSION,
        name=name,
        space={"subsystems": subsystems},
        operators=operators,
        collapse=collapse,
        initial_state=init,
        plan=plan,
        observables=tuple(observables),
        branches=tuple(branches),
        bipartitions=tuple(bipartitions),
        audits=tuple(audits),
    )
