"""
Management command that runs the thermodynamic-formalism toolkit.

Usage:
    python manage.py thermo validate formalism/fixtures/golden_mean.json
    python manage.py thermo verify-vp formalism/fixtures/golden_mean.json --n-max 12
    python manage.py thermo backward --p 1 --q 2 --c 0 --x 2 --n 12 --mode exact

Exit codes: 0 success, 1 input or validation error, 2 numerical failure.
"""
import logging
import math

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from formalism import serializers as documents
from formalism.conf import get_setting
from formalism.exceptions import InputError, InvariantViolation, NumericalError
from formalism.services import complex_correspondence as cc
from formalism.services import export_service
from formalism.services import finite_correspondence as fc
from formalism.services import kernels, pressure, ruelle
from formalism.services.random_source import GENERATOR_ID

logger = logging.getLogger(__name__)

FORMATS = ('report', 'csv', 'pgm', 'points')
HYPERBOLICITY_NOTE = (
    'note: hyperbolicity of the parameter c is taken on trust and not verified'
)


class Command(BaseCommand):
    help = 'Pressure, equilibrium states, transfer operators and backward orbits'
    requires_system_checks = []

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand', required=True)

        for name, helptext in (
            ('validate', 'Check a model file and report its dynamical predicates'),
            ('pressure', 'Spectral and combinatorial pressure of a model'),
            ('equilibrium', 'Equilibrium state, transfer spectrum and Gibbs constant'),
            ('verify-vp', 'Cross-check every pressure computation'),
        ):
            sub = subparsers.add_parser(name, help=helptext)
            self._add_common(sub)
            sub.add_argument('--n-max', type=int, default=8, dest='n_max')
            sub.add_argument('--method', choices=['both', 'matrix', 'enumerate'], default='both')

        for name, helptext in (
            ('entropy', 'Entropy rate of a kernel, optionally with a block estimate'),
            ('rokhlin', 'Backward kernel and the Rokhlin entropy'),
            ('sample', 'Sample a Markov path'),
        ):
            sub = subparsers.add_parser(name, help=helptext)
            self._add_common(sub)
            sub.add_argument('--k', type=int, default=2, help='block length')

        for name, helptext in (
            ('backward', 'Backward-orbit measure of f_c'),
            ('julia', 'Point cloud of random backward iteration'),
        ):
            sub = subparsers.add_parser(name, help=helptext)
            self._add_common(sub)
            self._add_complex(sub)
            self._add_grid(sub)

        sub = subparsers.add_parser('rasterize', help='Bin a point file on a grid')
        self._add_common(sub)
        self._add_grid(sub)

    def _add_common(self, parser):
        parser.add_argument('input', nargs='?', help='model, kernel, config or point file')
        parser.add_argument('--input', dest='input_option')
        parser.add_argument('--output')
        parser.add_argument('--n', type=int)
        parser.add_argument('--budget', type=int)
        parser.add_argument('--samples', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--tol', type=float)
        parser.add_argument('--format', choices=FORMATS, dest='output_format')

    def _add_complex(self, parser):
        parser.add_argument('--p', type=int)
        parser.add_argument('--q', type=int)
        parser.add_argument('--c', type=complex)
        parser.add_argument('--x', type=complex)
        parser.add_argument('--mode', choices=['exact', 'sampled'])
        parser.add_argument('--measure', choices=['a', 'b'], default='b')
        parser.add_argument('--potential', choices=cc.POTENTIAL_KINDS)
        parser.add_argument('--t', type=float)
        parser.add_argument('--burn', type=int, default=20)
        parser.add_argument('--workers', type=int)

    def _add_grid(self, parser):
        parser.add_argument(
            '--bounds', type=float, nargs=4, default=[-2.0, 2.0, -2.0, 2.0],
            metavar=('RE_MIN', 'RE_MAX', 'IM_MIN', 'IM_MAX'),
        )
        parser.add_argument('--resolution', type=int, nargs=2, default=[64, 64],
                            metavar=('NX', 'NY'))
        parser.add_argument('--png', help='also write a 16-bit PNG of the grid')

    # ------------------------------------------------------------------

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        handler = getattr(self, 'handle_' + subcommand.replace('-', '_'))
        config = self._resolve_config(options)
        try:
            output, summary = handler(config, options)
        except InputError as exc:
            logger.info("%s failed: %s", subcommand, exc)
            raise CommandError(str(exc), returncode=1)
        except NumericalError as exc:
            logger.info("%s failed: %s", subcommand, exc)
            raise CommandError(str(exc), returncode=2)
        self._emit(config, output, summary)

    def _resolve_config(self, options):
        tol = options['tol'] if options['tol'] is not None else get_setting('TOLERANCE')
        if not tol > 0:
            raise CommandError(f'--tol must be positive, got {tol}', returncode=1)
        seed = options['seed'] if options['seed'] is not None else get_setting('DEFAULT_SEED')
        budget = options['budget'] if options['budget'] is not None else get_setting('ORBIT_BUDGET')
        return {
            'subcommand': options['subcommand'],
            'input': options['input'] or options['input_option'],
            'output': options['output'],
            'format': options['output_format'],
            'n': options['n'],
            'n_max': options.get('n_max'),
            'budget': budget,
            'samples': options['samples'],
            'seed': seed,
            'tol': tol,
        }

    def _emit(self, config, output, summary):
        if config['output']:
            export_service.write_text(output, config['output'])
            self.stdout.write(summary)
        else:
            self.stdout.write(output, ending='')
            self.stderr.write(summary)

    def _require_input(self, config):
        if not config['input']:
            raise InputError(config['subcommand'], detail='an input file is required')
        return config['input']

    def _report(self, config, payload):
        document = dict(payload)
        document['config'] = self._header(config)
        return export_service.render_report(document)

    def _header(self, config):
        return {key: value for key, value in config.items() if key != 'output'}

    def _table_header(self, config):
        header = self._header(config)
        header['generator'] = GENERATOR_ID
        return header

    # ------------------------------------------------------------------
    # finite correspondences

    def handle_validate(self, config, options):
        correspondence, potential = documents.load_model(self._require_input(config))
        config['format'] = config['format'] or 'report'
        payload = {
            'states': correspondence.d,
            'edges': len(correspondence.edges),
            'irreducible': fc.is_irreducible(correspondence),
            'primitive': fc.is_primitive(correspondence),
            'strongly_transitive': fc.is_strongly_transitive(correspondence),
            'sup_norm': fc.sup_norm(potential),
        }
        summary = (
            f"valid: d={payload['states']} edges={payload['edges']} "
            f"irreducible={payload['irreducible']} primitive={payload['primitive']}"
        )
        return self._report(config, payload), summary

    def handle_pressure(self, config, options):
        correspondence, potential = documents.load_model(self._require_input(config))
        n = config['n'] or config['n_max']
        config['n'] = n
        config['format'] = config['format'] or 'report'
        spectral = pressure.pressure_spectral(correspondence, potential, tol=config['tol'])
        combinatorial = pressure.pressure_combinatorial(
            correspondence, potential, n, method=options['method'], budget=config['budget']
        )
        summary = f"pressure: spectral={spectral:.12f} combinatorial(n={n})={combinatorial:.12f}"
        if config['format'] == 'csv':
            rows = pressure.pressure_sequence(correspondence, potential, n)
            return export_service.render_sequence_csv(['n', 'estimate'], rows), summary
        payload = {
            'spectral': spectral,
            'combinatorial': {'n': n, 'estimate': combinatorial, 'method': options['method']},
            'topological_entropy': pressure.topological_entropy(correspondence),
            'lower_bound': -fc.sup_norm(potential),
        }
        return self._report(config, payload), summary

    def handle_equilibrium(self, config, options):
        correspondence, potential = documents.load_model(self._require_input(config))
        config['format'] = config['format'] or 'report'
        state = pressure.equilibrium_construct(correspondence, potential, tol=config['tol'])
        spectrum = ruelle.pf_spectrum(correspondence, potential, tol=config['tol'])
        summary = f"equilibrium: value={state.value:.12f} gap={state.gap:.3e}"
        if config['format'] == 'csv':
            length = config['n'] or 3
            config['n'] = length
            rows = ruelle.cylinder_table(spectrum, correspondence, potential, length)
            return export_service.render_cylinder_csv(rows), summary
        payload = {
            'equilibrium': state.as_dict(),
            'spectrum': {
                'eigenvalue': spectrum.eigenvalue if math.isfinite(spectrum.eigenvalue) else None,
                'log_eigenvalue': spectrum.log_eigenvalue,
                'right': spectrum.right,
                'left': spectrum.left,
                'residuals': [spectrum.right_residual, spectrum.left_residual],
                'primitive': spectrum.primitive,
            },
        }
        if spectrum.primitive:
            bound = ruelle.gibbs_constant(correspondence, potential, config['n_max'], spectrum)
            payload['gibbs'] = {
                'constant': bound.constant,
                'witness': [state + 1 for state in bound.witness],
                'n_max': bound.n_max,
            }
        return self._report(config, payload), summary

    def handle_verify_vp(self, config, options):
        correspondence, potential = documents.load_model(self._require_input(config))
        config['format'] = 'report'
        report = pressure.verify_vp(
            correspondence, potential, config['n_max'], budget=config['budget']
        )
        payload = report.as_dict()
        payload['combinatorial_last'] = report.combinatorial[-1][1]
        output = self._report(config, payload)
        if not report.passed:
            if config['output']:
                export_service.write_text(output, config['output'])
            raise InvariantViolation(', '.join(report.failed_checks()))
        summary = (
            f"verify-vp: spectral={report.spectral:.12f} "
            f"combinatorial={report.combinatorial[-1][1]:.12f} "
            f"constructed={report.constructed.value:.12f} "
            f"optimizer={report.optimizer.value:.12f} checks=pass"
        )
        return output, summary

    # ------------------------------------------------------------------
    # kernels

    def handle_entropy(self, config, options):
        distribution, kernel = documents.load_kernel(self._require_input(config))
        config['format'] = 'report'
        rate = kernels.entropy_rate(distribution, kernel)
        payload = {'entropy_rate': rate, 'upper_bound': kernels.entropy_bound(kernel)}
        summary = f"entropy: rate={rate:.12f}"
        if config['samples']:
            config['k'] = options['k']
            path = kernels.sample_path(distribution, kernel, config['samples'], config['seed'])
            estimate = kernels.block_entropy_estimate(path, options['k'])
            payload['block_estimate'] = {'k': options['k'], 'value': estimate,
                                         'generator': GENERATOR_ID}
            summary += f" block(k={options['k']})={estimate:.6f}"
        return self._report(config, payload), summary

    def handle_rokhlin(self, config, options):
        distribution, kernel = documents.load_kernel(self._require_input(config))
        config['format'] = 'report'
        reverse = kernels.backward_kernel(distribution, kernel)
        rate = kernels.entropy_rate(distribution, kernel)
        rokhlin = kernels.rokhlin_entropy(distribution, reverse)
        payload = {
            'backward_kernel': reverse.matrix,
            'entropy_rate': rate,
            'rokhlin_entropy': rokhlin,
            'difference': abs(rate - rokhlin),
        }
        summary = f"rokhlin: entropy_rate={rate:.12f} rokhlin={rokhlin:.12f}"
        return self._report(config, payload), summary

    def handle_sample(self, config, options):
        distribution, kernel = documents.load_kernel(self._require_input(config))
        length = config['n'] or config['samples']
        if not length:
            raise InputError(detail='sample needs a path length (--n)')
        config['n'] = length
        path = kernels.sample_path(distribution, kernel, length, config['seed'])
        summary = f"sample: {length} states, seed={path.seed}, generator={path.generator}"
        return export_service.render_path(path), summary

    # ------------------------------------------------------------------
    # holomorphic correspondences

    def _complex_setup(self, config, options, defaults):
        data = documents.read_complex(config['input']) if config['input'] else {}
        overrides = {
            'p': options['p'],
            'q': options['q'],
            'n': config['n'],
            'mode': options['mode'],
            'samples': config['samples'],
            'seed': options['seed'],
        }
        for key, value in overrides.items():
            if value is not None:
                data[key] = value
        for key, value in (('c', options['c']), ('x', options['x'])):
            if value is not None:
                data[key] = [value.real, value.imag]
        if options['potential'] is not None or options['t'] is not None:
            potential = dict(data.get('potential') or {})
            if options['potential'] is not None:
                potential['kind'] = options['potential']
            if options['t'] is not None:
                potential['t'] = options['t']
            data['potential'] = potential
        for key, value in defaults.items():
            data.setdefault(key, value)
        validated = documents.validate_document(data, documents.ComplexConfigSerializer)
        corr, spec, params = documents.complex_from_data(validated)
        config.update({
            'p': corr.p,
            'q': corr.q,
            'c': [corr.c.real, corr.c.imag],
            'x': [params['x'].real, params['x'].imag],
            'n': params['n'],
            'mode': params['mode'],
            'samples': params['samples'],
            'seed': params['seed'],
            'potential': spec.as_dict(),
        })
        self.stderr.write(HYPERBOLICITY_NOTE)
        return corr, spec, params

    def _grid_output(self, config, options, measure):
        grid = cc.rasterize(measure, options['bounds'], options['resolution'])
        config['bounds'] = list(grid.bounds)
        config['resolution'] = list(grid.resolution)
        if options['png']:
            export_service.write_density_png(grid, options['png'])
        header = self._table_header(config)
        if config['format'] == 'pgm':
            return export_service.render_grid_pgm(grid, header), grid
        return export_service.render_grid_csv(grid, header), grid

    def handle_backward(self, config, options):
        corr, spec, params = self._complex_setup(config, options, {'n': 8})
        config['format'] = config['format'] or 'points'
        config['measure'] = options['measure']
        builder = cc.equidist_measure_a if options['measure'] == 'a' else cc.equidist_measure_b
        measure = builder(
            corr, spec, params['x'], params['n'], mode=params['mode'],
            samples=params['samples'], seed=params['seed'], budget=config['budget'],
            workers=options['workers'],
        )
        log_z = cc.partition_function(
            corr, spec, params['x'], params['n'], mode=params['mode'],
            samples=params['samples'], seed=params['seed'], budget=config['budget'],
            workers=options['workers'],
        )
        summary = f"backward: {len(measure)} atoms, log Z_{params['n']}={log_z:.12f}"
        if config['format'] == 'points':
            output = export_service.render_points(
                measure.points, measure.logweights, self._table_header(config)
            )
            return output, summary
        if config['format'] == 'report':
            moduli = np.abs(measure.points)
            payload = {
                'log_partition': log_z,
                'atoms': len(measure),
                'total_mass': measure.total_mass(),
                'modulus_range': [float(moduli.min()), float(moduli.max())],
            }
            return self._report(config, payload), summary
        output, grid = self._grid_output(config, options, measure)
        return output, summary + f", outside={grid.outside:.3e}"

    def handle_julia(self, config, options):
        corr, _, params = self._complex_setup(
            config, options, {'n': 200, 'x': [1.0, 0.5], 'samples': 64}
        )
        config['format'] = config['format'] or 'points'
        config['burn'] = options['burn']
        points = cc.julia_cloud(
            corr, params['n'], options['burn'], params['samples'] or 64, params['seed'],
            start=params['x'],
        )
        summary = f"julia: {len(points)} points, max modulus {np.abs(points).max():.6f}"
        if config['format'] == 'points':
            return export_service.render_points(points, header=self._table_header(config)), summary
        measure = cc.EmpiricalMeasure(points, np.full(len(points), -math.log(len(points))))
        if config['format'] == 'report':
            payload = {
                'points': len(points),
                'max_modulus': float(np.abs(points).max()),
                'min_modulus': float(np.abs(points).min()),
            }
            return self._report(config, payload), summary
        output, _ = self._grid_output(config, options, measure)
        return output, summary

    def handle_rasterize(self, config, options):
        measure = documents.load_points(self._require_input(config))
        config['format'] = config['format'] or 'pgm'
        if config['format'] not in ('pgm', 'csv'):
            raise InputError(config['format'], detail='rasterize writes pgm or csv')
        output, grid = self._grid_output(config, options, measure)
        summary = (
            f"rasterize: {len(measure)} points on {grid.resolution[0]}x{grid.resolution[1]}, "
            f"outside={grid.outside:.3e}"
        )
        return output, summary
