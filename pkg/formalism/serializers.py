"""DRF serializers for model, kernel and complex-config documents.

The loaders at the bottom read a JSON document from disk, validate it with
these serializers and return domain objects. Any serializer failure is
reported as ``ParseError``; domain invariants (empty rows, stochastic rows)
raise their own errors afterwards.
"""
import json
import logging
import math

import numpy as np
from rest_framework import serializers

from .conf import get_setting
from .exceptions import ParseError
from .services import finite_correspondence as fc
from .services import kernels
from .services.pressure import equilibrium_construct
from .services.complex_correspondence import (
    POTENTIAL_KINDS, EmpiricalMeasure, HolomorphicCorrespondence, PotentialSpec,
)

logger = logging.getLogger(__name__)


class StrictFieldsMixin:
    """Reject keys the serializer does not declare."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError(
                    {name: ['Unknown field.'] for name in unknown}
                )
        return super().to_internal_value(data)


def _finite(value, name):
    if not math.isfinite(value):
        raise serializers.ValidationError(f"{name} must be finite")
    return value


class EdgeSerializer(StrictFieldsMixin, serializers.Serializer):
    to = serializers.IntegerField(min_value=1)
    phi = serializers.FloatField(default=0.0)

    def get_fields(self):
        # 'from' is a keyword, so it cannot be declared as a class attribute
        fields = super().get_fields()
        fields['from'] = serializers.IntegerField(min_value=1)
        return fields

    def validate_phi(self, value):
        return _finite(value, 'phi')


class ModelFileSerializer(StrictFieldsMixin, serializers.Serializer):
    states = serializers.IntegerField(min_value=1)
    edges = EdgeSerializer(many=True)

    def validate(self, attrs):
        d = attrs['states']
        seen = set()
        for index, edge in enumerate(attrs['edges']):
            pair = (edge['from'], edge['to'])
            if max(pair) > d:
                raise serializers.ValidationError(
                    {'edges': [f"edges[{index}] uses state {max(pair)} > states={d}"]}
                )
            if pair in seen:
                raise serializers.ValidationError(
                    {'edges': [f"edges[{index}] duplicates edge {pair[0]}->{pair[1]}"]}
                )
            seen.add(pair)
        return attrs


class KernelDocumentSerializer(StrictFieldsMixin, serializers.Serializer):
    states = serializers.IntegerField(min_value=1)
    kernel = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField())
    )
    distribution = serializers.ListField(child=serializers.FloatField(), required=False)

    def validate(self, attrs):
        d = attrs['states']
        rows = attrs['kernel']
        if len(rows) != d or any(len(row) != d for row in rows):
            raise serializers.ValidationError({'kernel': [f"kernel must be {d}x{d}"]})
        if 'distribution' in attrs and len(attrs['distribution']) != d:
            raise serializers.ValidationError(
                {'distribution': [f"distribution must have {d} entries"]}
            )
        return attrs


class PotentialSerializer(StrictFieldsMixin, serializers.Serializer):
    kind = serializers.ChoiceField(choices=POTENTIAL_KINDS, default='zero')
    t = serializers.FloatField(default=0.0)

    def validate_t(self, value):
        return _finite(value, 't')


class ComplexConfigSerializer(StrictFieldsMixin, serializers.Serializer):
    p = serializers.IntegerField(min_value=1)
    q = serializers.IntegerField(min_value=1)
    c = serializers.ListField(
        child=serializers.FloatField(), min_length=2, max_length=2, default=[0.0, 0.0]
    )
    potential = PotentialSerializer(required=False)
    x = serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2)
    n = serializers.IntegerField(min_value=0)
    mode = serializers.ChoiceField(choices=['exact', 'sampled'], default='exact')
    samples = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    seed = serializers.IntegerField(min_value=0, max_value=2**64 - 1, required=False)

    def validate(self, attrs):
        if attrs['p'] >= attrs['q']:
            raise serializers.ValidationError({'q': ["q must be larger than p"]})
        if attrs['mode'] == 'sampled' and not attrs.get('samples'):
            raise serializers.ValidationError({'samples': ["sampled mode needs samples"]})
        return attrs


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def _flatten_errors(errors, prefix=''):
    if isinstance(errors, dict):
        parts = []
        for key, value in errors.items():
            name = key if key != 'non_field_errors' else ''
            joined = f"{prefix}.{name}" if prefix and name else (name or prefix)
            parts.extend(_flatten_errors(value, joined))
        return parts
    if isinstance(errors, list):
        parts = []
        for index, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                parts.extend(_flatten_errors(value, f"{prefix}[{index}]"))
            elif value:
                parts.append(f"{prefix}: {value}" if prefix else str(value))
        return parts
    return [f"{prefix}: {errors}" if prefix else str(errors)]


def parse_document(text, serializer_class):
    """
    Decode JSON text and validate it.

    Raises:
        ParseError: malformed JSON (with its line) or a rejected field
    """
    return validate_document(decode_document(text), serializer_class)


def decode_document(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg) from exc
    if not isinstance(data, dict):
        raise ParseError(1, 'document must be a JSON object')
    return data


def validate_document(data, serializer_class):
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise ParseError(None, '; '.join(_flatten_errors(serializer.errors)))
    return serializer.validated_data


def _read(path):
    try:
        with open(path, encoding='utf-8') as handle:
            return handle.read()
    except OSError as exc:
        raise ParseError(None, f"cannot read {path}: {exc.strerror}") from exc


def model_from_data(data):
    """Domain objects from a validated model document (1-based edges)."""
    d = data['states']
    adjacency = np.zeros((d, d), dtype=bool)
    values = np.zeros((d, d))
    for edge in data['edges']:
        i, j = edge['from'] - 1, edge['to'] - 1
        adjacency[i, j] = True
        values[i, j] = edge['phi']
    correspondence = fc.validate(adjacency)
    return correspondence, fc.EdgePotential.from_matrix(correspondence, values)


def load_model(path):
    """
    Read a model file {"states": d, "edges": [{"from", "to", "phi"}]}.

    Returns:
        (FiniteCorrespondence, EdgePotential)
    """
    data = parse_document(_read(path), ModelFileSerializer)
    correspondence, potential = model_from_data(data)
    logger.info("Loaded model %s: d=%d, %d edges", path, correspondence.d, len(data['edges']))
    return correspondence, potential


def render_model(correspondence, potential):
    """Canonical model text: sorted keys, edges by (from, to), two-space indent."""
    edges = [
        {'from': i + 1, 'to': j + 1, 'phi': float(potential.values[i, j])}
        for i, j in correspondence.edges
    ]
    document = {'states': correspondence.d, 'edges': edges}
    return json.dumps(document, indent=2, sort_keys=True) + '\n'


def save_model(correspondence, potential, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(render_model(correspondence, potential))
    return path


def load_kernel(path):
    """
    Read a kernel document, or a model file whose equilibrium state is used.

    Returns:
        (ProbabilityVector, TransitionKernel); the distribution defaults to
        the stationary vector of the kernel
    """
    raw = decode_document(_read(path))
    if 'edges' in raw:
        correspondence, potential = model_from_data(validate_document(raw, ModelFileSerializer))
        state = equilibrium_construct(correspondence, potential)
        return state.distribution, state.kernel

    data = validate_document(raw, KernelDocumentSerializer)
    kernel = kernels.TransitionKernel(np.array(data['kernel'], dtype=float))
    if 'distribution' in data:
        distribution = kernels.ProbabilityVector(np.array(data['distribution'], dtype=float))
    else:
        distribution = kernels.stationary(kernel)
    return distribution, kernel


def complex_from_data(data):
    """Domain objects and run parameters from a validated complex config."""
    corr = HolomorphicCorrespondence(data['p'], data['q'], complex(*data['c']))
    potential_data = data.get('potential') or {}
    spec = PotentialSpec(potential_data.get('kind', 'zero'), potential_data.get('t', 0.0))
    params = {
        'x': complex(*data['x']),
        'n': data['n'],
        'mode': data['mode'],
        'samples': data.get('samples'),
        'seed': data.get('seed', get_setting('DEFAULT_SEED')),
    }
    return corr, spec, params


def read_complex(path):
    """The raw config document, for callers that overlay options before validating."""
    return decode_document(_read(path))


def load_complex(path):
    """
    Read a config {"p", "q", "c", "potential", "x", "n", "mode", "samples", "seed"}.

    Returns:
        (HolomorphicCorrespondence, PotentialSpec, params dict)
    """
    return complex_from_data(parse_document(_read(path), ComplexConfigSerializer))


def load_points(path):
    """
    Read a point cloud written as 'real imag [logweight]' lines.

    Lines starting with '#' are skipped; a missing weight counts as 0.

    Raises:
        ParseError: a line that is not two or three finite numbers
    """
    points, weights = [], []
    for number, line in enumerate(_read(path).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        fields = line.split()
        if len(fields) not in (2, 3):
            raise ParseError(number, f"expected 2 or 3 columns, got {len(fields)}")
        try:
            values = [float(field) for field in fields]
        except ValueError as exc:
            raise ParseError(number, str(exc)) from exc
        if not all(math.isfinite(value) for value in values):
            raise ParseError(number, 'non-finite value')
        points.append(complex(values[0], values[1]))
        weights.append(values[2] if len(values) == 3 else 0.0)
    if not points:
        raise ParseError(None, 'point file is empty')
    return EmpiricalMeasure(np.array(points, dtype=complex), np.array(weights))
