"""Model and run-manifest serialization (TOML or JSON).

Complex entries are written as ``"re+imj"`` strings with 17 significant
digits, which round-trips IEEE doubles exactly.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .algebra import I2, SM, SP, SX, SY, SZ, LocalOperator, Volume
from .generators import InteractionFamily, LindbladSpec, build_lindblad

__all__ = [
    "format_complex",
    "parse_complex",
    "matrix_to_text",
    "matrix_from_text",
    "load_manifest",
    "dump_manifest",
    "manifest_hash",
    "build_model",
    "model_block",
    "observable_from_block",
    "to_jsonable",
]

NAMED = {"id": I2, "sx": SX, "sy": SY, "sz": SZ, "sp": SP, "sm": SM}


def format_complex(z) -> str:
    z = complex(z)
    return f"{z.real:.17g}{z.imag:+.17g}j"


def parse_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    return complex(v)


def matrix_to_text(m) -> list:
    return [[format_complex(z) for z in row] for row in np.asarray(m)]


def matrix_from_text(rows) -> np.ndarray:
    if isinstance(rows, str):
        key = rows.lower()
        if key not in NAMED:
            raise ValueError(f"unknown named matrix {rows!r}; choose from {sorted(NAMED)}")
        return NAMED[key].astype(complex)
    return np.array([[parse_complex(z) for z in row] for row in rows], dtype=complex)


def load_manifest(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text.decode())


def dump_manifest(manifest: dict, path) -> None:
    """Write a manifest as JSON (the TOML equivalent is read by :func:`load_manifest`)."""
    Path(path).write_text(json.dumps(to_jsonable(manifest), indent=2, sort_keys=True) + "\n")


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and complex numbers for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return format_complex(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, Volume):
        return [list(x) for x in obj.sites]
    return obj


def manifest_hash(manifest: dict) -> str:
    canonical = json.dumps(to_jsonable(manifest), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _support(rel) -> Volume:
    return Volume(tuple(tuple(int(c) for c in (x if isinstance(x, (list, tuple)) else [x])) for x in rel))


def _explicit_model(block: dict):
    from .models import LatticeModel

    n = int(block.get("N", 1))
    centered = bool(block.get("centered", False))
    vol = Volume.centered_chain(n) if centered else Volume.chain(n)
    site = Volume.of(0)
    h = LocalOperator(site, matrix_from_text(block.get("hamiltonian", [["0", "0"], ["0", "0"]])))
    kraus = tuple(LocalOperator(site, matrix_from_text(k)) for k in block.get("kraus", []))
    gen = build_lindblad(LindbladSpec(h, kraus))
    terms = {}
    for term in block.get("interactions", []):
        gamma = _support(term["support"])
        hg = LocalOperator(gamma, matrix_from_text(term.get("hamiltonian",
                                                            np.zeros((2 ** len(gamma),) * 2))))
        kg = tuple(LocalOperator(gamma, matrix_from_text(k)) for k in term.get("kraus", []))
        terms[gamma] = build_lindblad(LindbladSpec(hg, kg))
    l = float(block.get("decay_length", 1.0 / (math.log(2) + 1)))
    fam = InteractionFamily(terms, l, translation_invariant=True)
    return LatticeModel("explicit", vol, gen, fam, dict(block))


def build_model(block: dict):
    """Model from a manifest block: ``ising``, ``heatbath`` or ``explicit``.

    Returns a :class:`~lattice_qms.models.LatticeModel`; for ``heatbath`` the
    :class:`~lattice_qms.models.HeatBathChain` is attached as ``params['chain']``.
    """
    from .models import HeatBathChain, ising_model

    preset = block.get("preset", "explicit")
    if preset == "ising":
        return ising_model(float(block.get("h", 0.3)), float(block.get("J", 0.05)),
                           int(block.get("N", 5)), bool(block.get("centered", False)))
    if preset == "heatbath":
        n = int(block.get("N", 4))
        temps = block.get("temperatures", [float(block.get("T", 1.0))] * n)
        chain = HeatBathChain(n, tuple(temps), float(block.get("h", 0.5)),
                              float(block.get("gamma", 0.5)), float(block.get("J", 0.05)),
                              float(block.get("kms_s", 0.5)))
        model = chain.model()
        model.params["chain"] = chain
        return model
    if preset == "explicit":
        return _explicit_model(block)
    raise ValueError(f"unknown model preset {preset!r}")


def model_block(lindblad: LindbladSpec, interactions: dict, N: int = 1, centered: bool = False,
                decay_length: float | None = None) -> dict:
    """Explicit model block from a single-site spec and ``{support: (H, kraus)}`` terms."""
    block = {"preset": "explicit", "N": N, "centered": centered,
             "hamiltonian": matrix_to_text(lindblad.hamiltonian.matrix),
             "kraus": [matrix_to_text(k.matrix) for k in lindblad.kraus_ops],
             "interactions": []}
    for gamma, (h, kraus) in interactions.items():
        gamma = gamma if isinstance(gamma, Volume) else Volume(tuple(gamma))
        block["interactions"].append({"support": [list(x) for x in gamma.sites],
                                      "hamiltonian": matrix_to_text(h),
                                      "kraus": [matrix_to_text(k) for k in kraus]})
    if decay_length is not None:
        block["decay_length"] = decay_length
    return block


def observable_from_block(block: dict) -> LocalOperator:
    """``{site = 0, matrix = "sz"}`` or ``{sites = [[0],[1]], matrix = [[...]]}``."""
    if "sites" in block:
        support = _support(block["sites"])
    else:
        support = Volume.of(block.get("site", 0))
    return LocalOperator(support, matrix_from_text(block.get("matrix", "sz")))
