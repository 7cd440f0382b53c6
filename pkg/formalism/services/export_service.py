"""Export service for reports, tables, point clouds and density images."""
import csv
import json
import logging
import math
from io import StringIO

import numpy as np
from PIL import Image
from rest_framework.utils.encoders import JSONEncoder

logger = logging.getLogger(__name__)

PGM_MAX = 65535


def render_report(payload):
    """
    Serialize a report document with stable key order.

    numpy arrays and scalars are converted through DRF's encoder.
    """
    return json.dumps(payload, cls=JSONEncoder, indent=2, sort_keys=True, allow_nan=False) + '\n'


def render_path(path):
    """One 1-based state per line under a header recording seed and generator."""
    lines = [
        f"# seed={path.seed}",
        f"# generator={path.generator}",
        f"# states={path.d}",
    ]
    lines.extend(str(int(state) + 1) for state in path.states)
    return '\n'.join(lines) + '\n'


def _write_header(output, header):
    """'# key=value' comment lines, keys sorted; non-string values as compact JSON."""
    for key in sorted(header or {}):
        value = header[key]
        if not isinstance(value, str):
            value = json.dumps(value, cls=JSONEncoder, separators=(',', ':'), sort_keys=True)
        output.write(f"# {key}={value}\n")


def render_points(points, logweights=None, header=None):
    """
    Point cloud as 'real imag logweight' lines.

    Without weights every point gets log(1/N). ``header`` (seed and
    parameters) is written first as comment lines.
    """
    points = np.asarray(points, dtype=complex)
    if logweights is None:
        logweights = np.full(len(points), -math.log(max(len(points), 1)))
    output = StringIO()
    _write_header(output, header)
    for point, weight in zip(points.tolist(), np.asarray(logweights).tolist()):
        output.write(f"{point.real:.17g} {point.imag:.17g} {weight:.17g}\n")
    return output.getvalue()


def _scaled_rows(grid):
    """Bin masses scaled linearly to 0..65535, top row = largest imaginary part."""
    peak = float(grid.bins.max())
    if peak <= 0:
        return np.zeros(grid.bins.shape, dtype=np.uint16)[::-1]
    scaled = np.rint(grid.bins / peak * PGM_MAX).astype(np.uint16)
    return scaled[::-1]


def render_grid_pgm(grid, header=None):
    """Plain (P2) graymap of a density grid; ``header`` goes into comments."""
    nx, ny = grid.resolution
    output = StringIO()
    output.write(f"P2\n# outside={grid.outside:.17g}\n")
    _write_header(output, header)
    output.write(f"{nx} {ny}\n{PGM_MAX}\n")
    for row in _scaled_rows(grid):
        output.write(' '.join(str(int(v)) for v in row) + '\n')
    return output.getvalue()


def render_grid_csv(grid, header=None):
    """Delimited table of bins: ix, iy, re, im (bin centre), mass."""
    output = StringIO()
    _write_header(output, header)
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(['ix', 'iy', 're', 'im', 'mass'])
    re_centres, im_centres = grid.centers()
    for iy, im in enumerate(im_centres.tolist()):
        for ix, re in enumerate(re_centres.tolist()):
            writer.writerow([ix, iy, f"{re:.17g}", f"{im:.17g}", f"{grid.bins[iy, ix]:.17g}"])
    return output.getvalue()


def render_cylinder_csv(rows):
    """Cylinder table with dash-joined 1-based orbits."""
    output = StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(['orbit', 'm_mass', 'mu_mass', 'gibbs_dev'])
    for row in rows:
        writer.writerow([
            '-'.join(str(state + 1) for state in row.orbit),
            f"{row.m_mass:.17g}",
            f"{row.mu_mass:.17g}",
            f"{row.gibbs_dev:.17g}",
        ])
    return output.getvalue()


def render_sequence_csv(header, rows):
    output = StringIO()
    writer = csv.writer(output, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return output.getvalue()


def write_density_png(grid, path):
    """
    Write a density grid as a 16-bit grayscale PNG.

    Args:
        grid: DensityGrid
        path: destination file

    Returns:
        The path written
    """
    image = Image.fromarray(np.ascontiguousarray(_scaled_rows(grid)), mode='I;16')
    image.save(path, format='PNG')
    logger.info("Wrote %dx%d density image -> %s", grid.resolution[0], grid.resolution[1], path)
    return path


def write_text(text, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(text)
    logger.info("Wrote %d bytes -> %s", len(text), path)
    return path
