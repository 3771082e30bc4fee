"""Enzyme-kinetics assay simulator: 57 task classes over a 7-variable interface.

Every class is defined by one rate-law template over the assay variables
(C_A, C_I, C_B, C_P, Enz, T, pH) with named hidden parameters. The same
template string is the simulator (parameters bound to sampled values), the
ground-truth expression (parameters replaced by numeric literals), and the
library hypothesis (parameters replaced by free constants C0, C1, ...), so
all three views share one skeleton by construction.

Catalog layout: 9 base families (easy tier), 14 single-modifier composites
(medium), 10 extended families plus 24 double-modifier composites (hard).
Composites multiply a saturating base family by modifier factors drawn from
{competitive shift, noncompetitive factor, product factor, Arrhenius factor};
single-modifier forms on michaelis_menten are omitted because they coincide
with base families, and uncompetitive_inhibition contributes its two
non-degenerate singles to reach the published class count. The catalog is
also serialized to ``data/chem_catalog.json`` as the versioned interface.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import exprlang, oracle
from ._seeding import stream
from .errors import InputOutOfBounds, MalformedManifest, UnknownFamily

CATALOG_VERSION = 1

ASSAY_VARIABLES = ("C_A", "C_I", "C_B", "C_P", "Enz", "T", "pH")

VARIABLE_BOUNDS = {
    "C_A": (0.0, 100.0),
    "C_I": (0.0, 100.0),
    "C_B": (0.0, 100.0),
    "C_P": (0.0, 100.0),
    "Enz": (0.01, 10.0),
    "T": (278.0, 333.0),
    "pH": (4.0, 10.0),
}

# (lo, hi, sampling) per hidden parameter; log-uniform spans multiple decades
# to match the rate magnitudes the benchmark is scored on.
_PARAM_RANGES = {
    "Vmax": (0.1, 100.0, "log"),
    "Km": (0.01, 50.0, "log"),
    "Kh": (0.01, 50.0, "log"),
    "Ki": (0.01, 50.0, "log"),
    "Kic": (0.01, 50.0, "log"),
    "Kin": (0.01, 50.0, "log"),
    "Kp": (0.01, 50.0, "log"),
    "Ksi": (0.01, 50.0, "log"),
    "Ka": (0.01, 50.0, "log"),
    "Kb": (0.01, 50.0, "log"),
    "Kia": (0.01, 50.0, "log"),
    "Kact": (0.01, 50.0, "log"),
    "Kci": (0.01, 50.0, "log"),
    "Kmet": (0.01, 50.0, "log"),
    "Kap": (0.01, 50.0, "log"),
    "Ki1": (0.01, 50.0, "log"),
    "Ki2": (0.01, 50.0, "log"),
    "nh": (1.5, 4.0, "log"),
    "nah": (0.3, 0.9, "log"),
    "mc": (1.5, 4.0, "log"),
    "mh": (1.5, 4.0, "log"),
    "Ea": (20.0, 80.0, "log"),  # kJ/mol; templates divide by R = 0.008314 kJ/(mol K)
    "kf": (0.1, 100.0, "log"),
    "hf": (0.1, 0.9, "log"),
    "pKa": (5.0, 9.0, "uniform"),
}

_ARRHENIUS = " * exp(-Ea / (0.008314 * T)) / exp(-Ea / (0.008314 * 298.15))"

_BASE_TEMPLATES = {
    "michaelis_menten": "Enz * Vmax * C_A / (Km + C_A)",
    "competitive_inhibition": "Enz * Vmax * C_A / (Km * (1 + C_I / Ki) + C_A)",
    "uncompetitive_inhibition": "Enz * Vmax * C_A / (Km + C_A * (1 + C_I / Ki))",
    "noncompetitive_inhibition": "Enz * Vmax * C_A / ((Km + C_A) * (1 + C_I / Ki))",
    "product_inhibition": "Enz * Vmax * C_A / (Km + C_A) / (1 + C_P / Kp)",
    "substrate_inhibition": "Enz * Vmax * C_A / (Km + C_A + C_A**2 / Ksi)",
    "hill_cooperativity": "Enz * Vmax * C_A**nh / (Kh**nh + C_A**nh)",
    "arrhenius_temperature": "Enz * Vmax * C_A / (Km + C_A)" + _ARRHENIUS,
    "ping_pong_bisubstrate": "Enz * Vmax * C_A * C_B / (Ka * C_B + Kb * C_A + C_A * C_B)",
}

_EXTENDED_TEMPLATES = {
    "ordered_bisubstrate": "Enz * Vmax * C_A * C_B / (Kia * Kb + Kb * C_A + Ka * C_B + C_A * C_B)",
    "allosteric_activation": "Enz * Vmax * C_A / (Km + C_A) * (1 + C_B / Kact)",
    "anticooperative_hill": "Enz * Vmax * C_A**nah / (Kh**nah + C_A**nah)",
    "fractal_kinetics": "Enz * kf * C_A**hf",
    "mixed_inhibition": "Enz * Vmax * C_A / (Km * (1 + C_I / Ki1) + C_A * (1 + C_I / Ki2))",
    "cooperative_inhibition": "Enz * Vmax * C_A / (Km + C_A) / (1 + (C_I / Kci)**mc)",
    "ph_dependence": "Enz * Vmax * C_A / (Km + C_A) / (1 + 10**(pKa - pH))",
    "metal_ion_activation": "Enz * Vmax * C_A / (Km + C_A) * C_B**mh / (Kmet**mh + C_B**mh)",
    "product_activation": "Enz * Vmax * C_A / (Km + C_A) * (1 + C_P / Kap)",
    "dual_inhibition": "Enz * Vmax * C_A / (Km + C_A) / (1 + C_I / Ki) / (1 + C_P / Kp)",
}

_MODIFIER_ORDER = ("competitive", "noncompetitive", "product", "arrhenius")
_COMPOSITE_BASES = ("michaelis_menten", "substrate_inhibition",
                    "hill_cooperativity", "ping_pong_bisubstrate")


def _composite_template(base: str, mods: tuple) -> str:
    competitive = "competitive" in mods
    if base == "michaelis_menten":
        km = "Km * (1 + C_I / Kic)" if competitive else "Km"
        text = f"Enz * Vmax * C_A / ({km} + C_A)"
    elif base == "substrate_inhibition":
        km = "Km * (1 + C_I / Kic)" if competitive else "Km"
        text = f"Enz * Vmax * C_A / ({km} + C_A + C_A**2 / Ksi)"
    elif base == "hill_cooperativity":
        kh = "(Kh * (1 + C_I / Kic))" if competitive else "Kh"
        text = f"Enz * Vmax * C_A**nh / ({kh}**nh + C_A**nh)"
    elif base == "ping_pong_bisubstrate":
        ka = "Ka * (1 + C_I / Kic)" if competitive else "Ka"
        text = f"Enz * Vmax * C_A * C_B / ({ka} * C_B + Kb * C_A + C_A * C_B)"
    elif base == "uncompetitive_inhibition":
        text = _BASE_TEMPLATES["uncompetitive_inhibition"]
    else:
        raise UnknownFamily(base)
    if "noncompetitive" in mods:
        text += " / (1 + C_I / Kin)"
    if "product" in mods:
        text += " / (1 + C_P / Kp)"
    if "arrhenius" in mods:
        text += _ARRHENIUS
    return text


@dataclass(frozen=True)
class FamilyDescriptor:
    family: str
    tier: str
    base: str
    modifiers: tuple
    template: str
    param_names: tuple          # order fixes the free-constant numbering
    relevant_variables: tuple

    def param_ranges(self) -> dict:
        return {p: _PARAM_RANGES[p] for p in self.param_names}


@dataclass(frozen=True)
class MechanismSpec:
    family: str
    base_family: str
    modifiers: tuple
    params: dict
    relevant_variables: tuple


@dataclass(frozen=True)
class ChemObservation:
    r0: float
    aux: dict


def _descriptor(family, tier, base, modifiers, template) -> FamilyDescriptor:
    parsed = exprlang.parse(template)
    param_names = tuple(n for n in _appearance_order(parsed) if n in _PARAM_RANGES)
    relevant = tuple(v for v in ASSAY_VARIABLES if v in parsed.variables_used)
    return FamilyDescriptor(family, tier, base, modifiers, template, param_names, relevant)


def _appearance_order(parsed: exprlang.ParsedHypothesis):
    seen: list = []

    def walk(node):
        if node.kind == "var" and node.name not in seen:
            seen.append(node.name)
        for child in node.children:
            walk(child)

    walk(parsed.ast)
    return seen


def _build_catalog() -> tuple:
    classes = []
    for family, template in _BASE_TEMPLATES.items():
        classes.append(_descriptor(family, "easy", family, (), template))

    def mods_name(base, mods):
        return f"{base}__" + "_".join(mods)

    # medium: one modifier on the non-MM saturating bases, plus the two
    # uncompetitive singles that do not collapse onto a base family
    for base in ("substrate_inhibition", "hill_cooperativity", "ping_pong_bisubstrate"):
        for mod in _MODIFIER_ORDER:
            mods = (mod,)
            classes.append(_descriptor(mods_name(base, mods), "medium", base, mods,
                                       _composite_template(base, mods)))
    for mod in ("product", "arrhenius"):
        mods = (mod,)
        classes.append(_descriptor(mods_name("uncompetitive_inhibition", mods), "medium",
                                   "uncompetitive_inhibition", mods,
                                   _composite_template("uncompetitive_inhibition", mods)))

    for family, template in _EXTENDED_TEMPLATES.items():
        classes.append(_descriptor(family, "hard", family, (), template))

    # hard: every two-modifier composite on the four saturating bases
    for base in _COMPOSITE_BASES:
        for i in range(len(_MODIFIER_ORDER)):
            for j in range(i + 1, len(_MODIFIER_ORDER)):
                mods = (_MODIFIER_ORDER[i], _MODIFIER_ORDER[j])
                classes.append(_descriptor(mods_name(base, mods), "hard", base, mods,
                                           _composite_template(base, mods)))
    return tuple(classes)


_CATALOG = _build_catalog()
_BY_FAMILY = {d.family: d for d in _CATALOG}
assert len(_CATALOG) == 57, f"catalog has {len(_CATALOG)} classes, expected 57"


def catalog() -> tuple:
    """All 57 task-class descriptors, catalog order (easy, medium, hard)."""
    return _CATALOG


def descriptor(family: str) -> FamilyDescriptor:
    try:
        return _BY_FAMILY[family]
    except KeyError:
        raise UnknownFamily(f"unknown chem family {family!r}") from None


def instantiate(family: str, difficulty: str, seed: int) -> MechanismSpec:
    """Draw hidden parameters for a family; deterministic in (family, seed)."""
    desc = descriptor(family)
    rng = stream(seed, "chem-mechanism", family)
    params = {}
    for name in desc.param_names:
        lo, hi, scale = _PARAM_RANGES[name]
        if scale == "log":
            params[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        else:
            params[name] = float(rng.uniform(lo, hi))
    return MechanismSpec(family, desc.base, desc.modifiers, params, desc.relevant_variables)


def clean_rate(spec: MechanismSpec, x: dict) -> float:
    """Noiseless rate law value; pure in (spec, x)."""
    desc = descriptor(spec.family)
    parsed = exprlang.parse(desc.template)
    bindings = {name: float(x[name]) for name in desc.relevant_variables}
    bindings.update(spec.params)
    return exprlang.evaluate(parsed, bindings, {})


def rate(spec: MechanismSpec, x: dict) -> ChemObservation:
    """One assay readout: initial rate plus the two mass-balance checks."""
    oracle.check_bounds(x, ASSAY_VARIABLES, VARIABLE_BOUNDS)
    r0 = clean_rate(spec, x)
    aux = {"total_substrate_check": float(x["C_A"]) + float(x["C_P"]),
           "enzyme_check": float(x["Enz"])}
    return ChemObservation(r0, aux)


def truth_expression(spec: MechanismSpec) -> str:
    """The hidden law rendered with literal parameter values (harness-only)."""
    desc = descriptor(spec.family)
    parsed = exprlang.parse(desc.template)
    return exprlang.print_hypothesis(exprlang.substitute_names(parsed, spec.params))


def library_expression(family: str) -> str:
    """Family template with parameters as free constants C0, C1, ..."""
    desc = descriptor(family)
    parsed = exprlang.parse(desc.template)
    mapping = {p: f"C{i}" for i, p in enumerate(desc.param_names)}
    return exprlang.print_hypothesis(exprlang.substitute_names(parsed, mapping))


def library_expressions() -> tuple:
    """The full mechanism library used by library-driven methods, catalog order."""
    return tuple(library_expression(d.family) for d in _CATALOG)


# --- catalog data file ----------------------------------------------------------

def catalog_as_dict() -> dict:
    return {
        "version": CATALOG_VERSION,
        "note": ("9 base families (easy), 14 single-modifier composites (medium), "
                 "10 extended + 24 double-modifier composites (hard); composite set "
                 "chosen here, single-modifier MM forms omitted as duplicates of "
                 "base families."),
        "variable_bounds": {k: list(v) for k, v in VARIABLE_BOUNDS.items()},
        "classes": [
            {
                "family": d.family,
                "tier": d.tier,
                "base": d.base,
                "modifiers": list(d.modifiers),
                "template": d.template,
                "params": [{"name": p, "lo": _PARAM_RANGES[p][0], "hi": _PARAM_RANGES[p][1],
                            "scale": _PARAM_RANGES[p][2]} for p in d.param_names],
                "relevant_variables": list(d.relevant_variables),
            }
            for d in _CATALOG
        ],
    }


def export_catalog(path) -> None:
    with open(path, "w") as fh:
        json.dump(catalog_as_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def shipped_catalog() -> dict:
    with resources.files("sciloop.data").joinpath("chem_catalog.json").open() as fh:
        return json.load(fh)


# --- oracle opener ----------------------------------------------------------------

def _open_chem(manifest: oracle.TaskManifest) -> oracle.BudgetedOracle:
    desc = descriptor(manifest.family_or_motif)
    if manifest.difficulty != desc.tier:
        raise MalformedManifest(
            f"{manifest.family_or_motif} is {desc.tier}-tier, manifest says {manifest.difficulty}")
    spec = instantiate(manifest.family_or_motif, manifest.difficulty, manifest.seed)

    def observe(x, rng, sigma):
        clean = rate(spec, x)
        return ChemObservation(oracle.apply_noise(clean.r0, sigma, rng), clean.aux)

    def validate(x):
        oracle.check_bounds(x, ASSAY_VARIABLES, VARIABLE_BOUNDS)

    return oracle.BudgetedOracle(
        manifest, "equation", observe, validate,
        variables=ASSAY_VARIABLES, bounds=VARIABLE_BOUNDS,
        response_value=lambda obs: obs.r0)


oracle.register_benchmark("chem", _open_chem)
