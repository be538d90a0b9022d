"""The FMI 3.0 ``modelDescription.xml`` subset used by the adapter FMU.

Only co-simulation metadata, scalar Float64/Float32/UInt32 variables, the
model structure and the ``VCML`` annotation are modeled. Anything else in a
file is skipped with a :class:`SubsetWarning`.
"""

from __future__ import annotations

import enum
import posixpath
import warnings
import xml.etree.ElementTree as ET
from xml.parsers import expat
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Tuple

from .kernel import is_valid_key
from .values import BadValue, PropertyValue, ValueType

VARIABLE_TYPES = (ValueType.FLOAT64, ValueType.FLOAT32, ValueType.UINT32)
TIME_NAME = "time"


class ModelDescriptionError(Exception):
    pass


class XmlSyntax(ModelDescriptionError):
    pass


class SchemaViolation(ModelDescriptionError):
    def __init__(self, message, element=None, line=None):
        where = ""
        if element is not None:
            where = f" <{element}>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{message}{where}")
        self.element = element
        self.line = line


class SubsetWarning(UserWarning):
    """Content outside the supported FMI subset was ignored."""


class Causality(str, enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    INDEPENDENT = "independent"


class Variability(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class CoSimulation:
    model_identifier: str
    needs_execution_tool: bool = False
    can_handle_variable_communication_step_size: bool = False


@dataclass(frozen=True)
class DefaultExperiment:
    start_time: Optional[float] = None
    stop_time: Optional[float] = None
    step_size: Optional[float] = None


@dataclass(frozen=True)
class ModelVariable:
    name: str
    value_reference: int
    type: ValueType
    causality: Causality
    variability: Variability = Variability.CONTINUOUS
    start: Optional[PropertyValue] = None


@dataclass(frozen=True)
class ModelStructure:
    initial_unknowns: Tuple[int, ...] = ()
    outputs: Tuple[int, ...] = ()


@dataclass(frozen=True)
class VcmlAnnotation:
    host: str
    port: int
    executable: Optional[str] = None
    args: Optional[str] = None


@dataclass(frozen=True)
class ModelDescription:
    model_name: str
    co_simulation: CoSimulation
    variables: Tuple[ModelVariable, ...]
    vcml: VcmlAnnotation
    structure: ModelStructure = field(default_factory=ModelStructure)
    default_experiment: Optional[DefaultExperiment] = None
    instantiation_token: Optional[str] = None
    fmi_version: str = "3.0"

    def __post_init__(self):
        validate(self)

    def variable(self, name: str) -> ModelVariable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def inputs(self):
        return [v for v in self.variables if v.causality is Causality.INPUT]

    def outputs(self):
        return [v for v in self.variables if v.causality is Causality.OUTPUT]


class VarInfo(NamedTuple):
    name: str
    type: ValueType
    causality: Causality


def vr_map(md: ModelDescription) -> Dict[int, VarInfo]:
    return {v.value_reference: VarInfo(v.name, v.type, v.causality) for v in md.variables}


def _fail(msg, element=None, line=None):
    raise SchemaViolation(msg, element, line)


def check_relative_path(path: str) -> None:
    if not path or path.startswith("/") or "\\" in path:
        _fail(f"executable must be a relative POSIX path, got {path!r}", "VP")
    parts = path.split("/")
    if any(p in ("", ".", "..") for p in parts) or posixpath.normpath(path) != path:
        _fail(f"executable path {path!r} must be normalized and free of '..'", "VP")


def validate(md: ModelDescription) -> None:
    """Raise :class:`SchemaViolation` on the first violated invariant."""
    if md.fmi_version != "3.0":
        _fail(f"fmiVersion must be 3.0, got {md.fmi_version!r}", "fmiModelDescription")
    if not md.model_name:
        _fail("modelName is empty", "fmiModelDescription")
    if not md.co_simulation.model_identifier:
        _fail("modelIdentifier is empty", "CoSimulation")
    ex = md.default_experiment
    if ex is not None:
        if ex.step_size is not None and not ex.step_size > 0:
            _fail(f"stepSize must be > 0, got {ex.step_size}", "DefaultExperiment")
        if ex.start_time is not None and ex.stop_time is not None and ex.start_time > ex.stop_time:
            _fail("startTime > stopTime", "DefaultExperiment")
        if ex.start_time is not None and ex.start_time < 0:
            _fail("startTime must be >= 0", "DefaultExperiment")

    seen_vr: Dict[int, str] = {}
    seen_names = set()
    independents = []
    for v in md.variables:
        tag = v.type.value
        if v.type not in VARIABLE_TYPES:
            _fail(f"unsupported variable type {tag}", tag)
        if not 0 <= v.value_reference <= 0xFFFFFFFF:
            _fail(f"valueReference {v.value_reference} out of 32-bit range", tag)
        if v.value_reference in seen_vr:
            _fail(f"duplicate valueReference {v.value_reference} "
                  f"({seen_vr[v.value_reference]} and {v.name})", tag)
        seen_vr[v.value_reference] = v.name
        if v.name in seen_names:
            _fail(f"duplicate variable name {v.name}", tag)
        seen_names.add(v.name)
        if v.causality is Causality.INDEPENDENT:
            independents.append(v)
            if v.name != TIME_NAME or v.type is not ValueType.FLOAT64:
                _fail("the independent variable must be Float64 'time'", tag)
        else:
            if v.name == TIME_NAME:
                _fail("'time' is reserved for the independent variable", tag)
            if not is_valid_key(v.name):
                _fail(f"variable name {v.name!r} is not a property path", tag)
        if v.causality is Causality.INPUT:
            if v.start is None:
                _fail(f"input {v.name} has no start value", tag)
        elif v.start is not None:
            _fail(f"start value only allowed on inputs ({v.name})", tag)
        if v.start is not None and v.start.type is not v.type:
            _fail(f"start of {v.name} is {v.start.type.value}, expected {tag}", tag)
    if len(independents) > 1:
        _fail(f"at most one independent variable allowed, found {len(independents)}",
              "ModelVariables")

    for vr in md.structure.initial_unknowns:
        if vr not in seen_vr:
            _fail(f"InitialUnknown references unknown valueReference {vr}", "InitialUnknown")
    by_vr = {v.value_reference: v for v in md.variables}
    for vr in md.structure.outputs:
        if vr not in by_vr:
            _fail(f"Output references unknown valueReference {vr}", "Output")
        if by_vr[vr].causality is not Causality.OUTPUT:
            _fail(f"Output {vr} ({by_vr[vr].name}) does not have causality output", "Output")

    vc = md.vcml
    if not vc.host:
        _fail("VCML host is empty", "VP")
    if not 1 <= vc.port <= 65535:
        _fail(f"VCML port {vc.port} out of range", "VP")
    if vc.executable is not None:
        check_relative_path(vc.executable)


# -- parsing ------------------------------------------------------------------

def _build_tree(data: bytes):
    """ElementTree build that also records the source line of each element."""
    builder = ET.TreeBuilder()
    lines: Dict[int, int] = {}
    p = expat.ParserCreate()

    def start(tag, attrs):
        el = builder.start(tag, attrs)
        lines[id(el)] = p.CurrentLineNumber

    p.StartElementHandler = start
    p.EndElementHandler = builder.end
    p.CharacterDataHandler = builder.data
    try:
        p.Parse(data, True)
    except expat.ExpatError as e:
        raise XmlSyntax(f"XML syntax error: {e}") from None
    return builder.close(), lines


def _parse_bool(text, el, line):
    if text in ("true", "1"):
        return True
    if text in ("false", "0"):
        return False
    _fail(f"not a boolean: {text!r}", el, line)


def _parse_float(text, el, line):
    try:
        return float(text)
    except ValueError:
        _fail(f"not a number: {text!r}", el, line)


def _parse_uint(text, el, line, bits=32):
    if text is None or not text.isdigit() or int(text) >= 2**bits:
        _fail(f"not an unsigned {bits}-bit integer: {text!r}", el, line)
    return int(text)


_KNOWN_ATTRS = {
    "fmiModelDescription": {"fmiVersion", "modelName", "instantiationToken"},
    "CoSimulation": {"modelIdentifier", "needsExecutionTool",
                     "canHandleVariableCommunicationStepSize"},
    "DefaultExperiment": {"startTime", "stopTime", "stepSize"},
    "variable": {"name", "valueReference", "causality", "variability", "start"},
    "VP": {"host", "port", "executable", "args"},
}


def _warn_unknown_attrs(el, kind, line):
    extra = set(el.attrib) - _KNOWN_ATTRS[kind]
    for a in sorted(extra):
        warnings.warn(f"ignoring attribute {a!r} on <{el.tag}> (line {line})",
                      SubsetWarning, stacklevel=4)


def parse(data) -> ModelDescription:
    """Parse and validate ``modelDescription.xml`` bytes (or str)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    root, lines = _build_tree(data)
    line = lambda el: lines.get(id(el))  # noqa: E731

    if root.tag != "fmiModelDescription":
        _fail(f"root element must be fmiModelDescription, got {root.tag}", root.tag, line(root))
    _warn_unknown_attrs(root, "fmiModelDescription", line(root))
    fmi_version = root.get("fmiVersion")
    model_name = root.get("modelName")
    if fmi_version is None or model_name is None:
        _fail("fmiVersion and modelName are required", root.tag, line(root))

    cosim = None
    experiment = None
    variables = []
    structure = ModelStructure()
    vcml = None

    for child in root:
        ln = line(child)
        if child.tag == "CoSimulation":
            _warn_unknown_attrs(child, "CoSimulation", ln)
            mid = child.get("modelIdentifier")
            if not mid:
                _fail("modelIdentifier is required", child.tag, ln)
            cosim = CoSimulation(
                mid,
                _parse_bool(child.get("needsExecutionTool", "false"), child.tag, ln),
                _parse_bool(child.get("canHandleVariableCommunicationStepSize", "false"),
                            child.tag, ln))
        elif child.tag == "DefaultExperiment":
            _warn_unknown_attrs(child, "DefaultExperiment", ln)
            vals = {}
            for attr in ("startTime", "stopTime", "stepSize"):
                raw = child.get(attr)
                vals[attr] = None if raw is None else _parse_float(raw, child.tag, ln)
            experiment = DefaultExperiment(vals["startTime"], vals["stopTime"], vals["stepSize"])
        elif child.tag == "ModelVariables":
            for var_el in child:
                var = _parse_variable(var_el, line(var_el))
                if any(v.value_reference == var.value_reference for v in variables):
                    _fail(f"duplicate valueReference {var.value_reference}",
                          var_el.tag, line(var_el))
                variables.append(var)
        elif child.tag == "ModelStructure":
            initial, outputs = [], []
            for s in child:
                sl = line(s)
                if s.tag == "InitialUnknown":
                    initial.append(_parse_uint(s.get("valueReference"), s.tag, sl))
                elif s.tag == "Output":
                    outputs.append(_parse_uint(s.get("valueReference"), s.tag, sl))
                else:
                    warnings.warn(f"ignoring <{s.tag}> in ModelStructure (line {sl})",
                                  SubsetWarning, stacklevel=2)
            structure = ModelStructure(tuple(initial), tuple(outputs))
        elif child.tag == "Annotations":
            for ann in child:
                if ann.tag == "Annotation" and ann.get("type") == "VCML":
                    if vcml is not None:
                        _fail("more than one VCML annotation", ann.tag, line(ann))
                    vcml = _parse_vcml(ann, line)
                else:
                    warnings.warn(f"ignoring non-VCML annotation (line {line(ann)})",
                                  SubsetWarning, stacklevel=2)
        else:
            warnings.warn(f"ignoring <{child.tag}> (line {ln})", SubsetWarning, stacklevel=2)

    if cosim is None:
        _fail("CoSimulation element is required", root.tag, line(root))
    if vcml is None:
        _fail("VCML annotation is required", "Annotations")
    return ModelDescription(
        model_name=model_name,
        co_simulation=cosim,
        variables=tuple(variables),
        vcml=vcml,
        structure=structure,
        default_experiment=experiment,
        instantiation_token=root.get("instantiationToken"),
        fmi_version=fmi_version,
    )


def _parse_variable(el, ln) -> ModelVariable:
    try:
        vtype = ValueType(el.tag)
    except ValueError:
        vtype = None
    if vtype not in VARIABLE_TYPES:
        _fail(f"unsupported variable element <{el.tag}>", el.tag, ln)
    _warn_unknown_attrs(el, "variable", ln)
    name = el.get("name")
    if not name:
        _fail("variable without name", el.tag, ln)
    vr = _parse_uint(el.get("valueReference"), el.tag, ln)
    try:
        causality = Causality(el.get("causality", "local"))
    except ValueError:
        _fail(f"unsupported causality {el.get('causality', 'local')!r} for {name}", el.tag, ln)
    try:
        variability = Variability(el.get("variability", "continuous"))
    except ValueError:
        _fail(f"unsupported variability {el.get('variability')!r} for {name}", el.tag, ln)
    start = None
    raw = el.get("start")
    if raw is not None:
        try:
            start = PropertyValue.decode(vtype, raw)
        except BadValue as e:
            _fail(f"bad start value for {name}: {e}", el.tag, ln)
    if causality is Causality.INPUT and start is None:
        _fail(f"input {name} has no start value", el.tag, ln)
    return ModelVariable(name, vr, vtype, causality, variability, start)


def _parse_vcml(ann, line) -> VcmlAnnotation:
    vp = None
    for el in ann:
        if el.tag == "VP":
            vp = el
        else:
            warnings.warn(f"ignoring <{el.tag}> in VCML annotation", SubsetWarning, stacklevel=3)
    if vp is None:
        _fail("VCML annotation needs a <VP> element", "Annotation", line(ann))
    ln = line(vp)
    _warn_unknown_attrs(vp, "VP", ln)
    host = vp.get("host")
    if not host:
        _fail("VP host is required", "VP", ln)
    port = vp.get("port")
    if port is None or not port.isdigit():
        _fail(f"VP port must be an integer, got {port!r}", "VP", ln)
    return VcmlAnnotation(host, int(port), vp.get("executable"), vp.get("args"))


# -- serialization ------------------------------------------------------------

def _fmt_float(x: float) -> str:
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def _fmt_bool(b: bool) -> str:
    return "true" if b else "false"


def serialize(md: ModelDescription) -> bytes:
    root = ET.Element("fmiModelDescription")
    root.set("fmiVersion", md.fmi_version)
    root.set("modelName", md.model_name)
    if md.instantiation_token is not None:
        root.set("instantiationToken", md.instantiation_token)
    cs = ET.SubElement(root, "CoSimulation")
    cs.set("modelIdentifier", md.co_simulation.model_identifier)
    cs.set("needsExecutionTool", _fmt_bool(md.co_simulation.needs_execution_tool))
    cs.set("canHandleVariableCommunicationStepSize",
           _fmt_bool(md.co_simulation.can_handle_variable_communication_step_size))
    ex = md.default_experiment
    if ex is not None:
        de = ET.SubElement(root, "DefaultExperiment")
        for attr, val in (("startTime", ex.start_time), ("stopTime", ex.stop_time),
                          ("stepSize", ex.step_size)):
            if val is not None:
                de.set(attr, _fmt_float(val))
    mv = ET.SubElement(root, "ModelVariables")
    for v in md.variables:
        el = ET.SubElement(mv, v.type.value)
        el.set("name", v.name)
        el.set("valueReference", str(v.value_reference))
        el.set("causality", v.causality.value)
        el.set("variability", v.variability.value)
        if v.start is not None:
            el.set("start", v.start.encode())
    ms = ET.SubElement(root, "ModelStructure")
    for vr in md.structure.initial_unknowns:
        ET.SubElement(ms, "InitialUnknown").set("valueReference", str(vr))
    for vr in md.structure.outputs:
        ET.SubElement(ms, "Output").set("valueReference", str(vr))
    anns = ET.SubElement(root, "Annotations")
    ann = ET.SubElement(anns, "Annotation")
    ann.set("type", "VCML")
    vp = ET.SubElement(ann, "VP")
    vp.set("host", md.vcml.host)
    vp.set("port", str(md.vcml.port))
    if md.vcml.executable is not None:
        vp.set("executable", md.vcml.executable)
    if md.vcml.args is not None:
        vp.set("args", md.vcml.args)
    ET.indent(root, space="  ")
    body = ET.tostring(root, encoding="unicode")
    return ('<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n").encode("utf-8")


def load(path) -> ModelDescription:
    with open(path, "rb") as f:
        return parse(f.read())
