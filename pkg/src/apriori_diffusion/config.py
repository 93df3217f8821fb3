"""Model files: TOML documents with [rotor], [[pendulum]] and [[perturbation.mode]] tables.

Example::

    epsilon = 0.001

    [rotor]
    dim = 1
    coefficients = [{powers = [2], coeff = 0.5}]

    [[pendulum]]
    sign = 1
    fourier_coeffs = [[0, -1.0, 0.0], [1, 1.0, 0.0]]

    [[perturbation.mode]]
    k = [1]
    l = [0]
    m = 1
    amplitude = 0.5
    phase = 0.0
"""

from __future__ import annotations

import re
from pathlib import Path

import tomli
import tomli_w

from .errors import DiffusionError, InputError
from .model import Mode, PendulumSpec, PerturbationSpec, RotorSpec, SystemSpec


class ModelFileError(InputError):
    """Problem in a model file, with the offending line when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = path or "<model>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")
        self.line = line


def _header_line(text: str, header: str, index: int) -> int | None:
    """1-based line of the index-th occurrence of a table header."""
    pattern = re.compile(r"^\s*" + re.escape(header) + r"\s*(#.*)?$")
    count = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            if count == index:
                return lineno
            count += 1
    return None


def _key_line(text: str, key: str) -> int | None:
    pattern = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.match(line):
            return lineno
    return None


def parse_model(text: str, path: str | None = None) -> SystemSpec:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ModelFileError(exc.msg, getattr(exc, "lineno", None), path) from exc

    def fail(msg, header=None, index=0, key=None):
        line = None
        if header is not None:
            line = _header_line(text, header, index)
        elif key is not None:
            line = _key_line(text, key)
        raise ModelFileError(msg, line, path)

    rotor_doc = doc.get("rotor")
    if not isinstance(rotor_doc, dict):
        fail("missing [rotor] table")
    try:
        coeffs = rotor_doc.get("coefficients", [])
        terms = tuple((tuple(c["powers"]), float(c["coeff"])) for c in coeffs)
        dim = int(rotor_doc.get("dim", len(terms[0][0]) if terms else 1))
        rotor = RotorSpec(terms, dim=dim)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        fail(f"bad [rotor] table: {exc}", header="[rotor]")

    pend_docs = doc.get("pendulum", [])
    if not isinstance(pend_docs, list) or not pend_docs:
        fail("at least one [[pendulum]] table is required")
    pendulums = []
    for i, pd in enumerate(pend_docs):
        try:
            pendulums.append(
                PendulumSpec(
                    tuple(tuple(t) for t in pd["fourier_coeffs"]),
                    sign=int(pd.get("sign", 1)),
                    branch=int(pd.get("branch", 1)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            fail(f"bad [[pendulum]] #{i + 1}: {exc}", header="[[pendulum]]", index=i)

    pert = doc.get("perturbation", {})
    mode_docs = pert.get("mode", []) if isinstance(pert, dict) else []
    modes = []
    for i, md in enumerate(mode_docs):
        try:
            modes.append(
                Mode(
                    tuple(md["k"]),
                    tuple(md.get("l", [0] * rotor.dim)),
                    int(md.get("m", 0)),
                    float(md["amplitude"]),
                    float(md.get("phase", 0.0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            fail(f"bad [[perturbation.mode]] #{i + 1}: {exc}", header="[[perturbation.mode]]", index=i)

    try:
        epsilon = float(doc.get("epsilon", 0.0))
    except (TypeError, ValueError):
        fail("epsilon must be a number", key="epsilon")
    try:
        return SystemSpec(rotor, tuple(pendulums), PerturbationSpec(tuple(modes)), epsilon)
    except DiffusionError as exc:
        line = _header_line(text, "[[perturbation.mode]]", 0) if modes else None
        raise ModelFileError(str(exc), line, path) from exc


def load_model(path) -> SystemSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file: {exc.strerror}", None, str(path)) from exc
    return parse_model(text, str(path))


def model_to_dict(spec: SystemSpec) -> dict:
    return {
        "epsilon": spec.epsilon,
        "rotor": {
            "dim": spec.rotor.dim,
            "coefficients": [{"powers": list(p), "coeff": c} for p, c in spec.rotor.coefficients],
        },
        "pendulum": [
            {
                "sign": pd.sign,
                "branch": pd.branch,
                "fourier_coeffs": [[k, c, s] for k, c, s in pd.fourier_coeffs],
            }
            for pd in spec.pendulums
        ],
        "perturbation": {
            "mode": [
                {"k": list(md.k), "l": list(md.l), "m": md.m, "amplitude": md.amplitude, "phase": md.phase}
                for md in spec.perturbation.modes
            ]
        },
    }


def dump_model(spec: SystemSpec) -> str:
    return tomli_w.dumps(model_to_dict(spec))


def save_model(spec: SystemSpec, path) -> None:
    Path(path).write_text(dump_model(spec))
